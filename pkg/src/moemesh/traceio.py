"""Reading and writing the canonical JSONL trace format.

Wire format, one JSON object per line:

    {"model": {...}}                                  <- header, first line
    {"request_id": "...", "tags": {...},
     "prefill": [[[e, ...] per MoE layer] per token],
     "decode":  [[[e, ...] per MoE layer] per token]}

Expert ids inside a selection are stored sorted ascending. A ``.gz`` suffix
selects gzip transport. Saving the same TraceSet twice yields byte-identical
files; loading a saved set reproduces it exactly.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
from pathlib import Path
from typing import Callable, Iterator, Mapping

from .errors import TraceSchemaError
from .traces import ModelSpec, Phase, RequestTrace, TokenStep, TraceSet, validate_request

__all__ = ["load_traces", "save_traces", "iter_requests", "read_model_header"]

log = logging.getLogger(__name__)

# An adapter receives one raw decoded JSON object and returns an object in the
# canonical record shape above, letting foreign dump formats ride the same loader.
RecordAdapter = Callable[[Mapping], Mapping]


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _parse_tokens(raw, phase: Phase, req_id: str, offset: int) -> list[TokenStep]:
    if not isinstance(raw, list):
        raise TraceSchemaError(f"request {req_id!r}: {phase.value} field must be a list")
    out = []
    for ti, tok in enumerate(raw):
        if not isinstance(tok, list):
            raise TraceSchemaError(
                f"request {req_id!r} token {offset + ti}: token must be a list of per-layer selections"
            )
        sels = []
        for li, sel in enumerate(tok):
            if not isinstance(sel, list) or not all(isinstance(e, int) for e in sel):
                raise TraceSchemaError(
                    f"request {req_id!r} token {offset + ti} layer {li}: selection must be a list of ints"
                )
            sels.append(tuple(sel))
        out.append(TokenStep(phase=phase, selections=tuple(sels)))
    return out


def _parse_record(obj: Mapping, spec: ModelSpec) -> RequestTrace:
    try:
        req_id = str(obj["request_id"])
    except (KeyError, TypeError):
        raise TraceSchemaError("record missing 'request_id'") from None
    tags = obj.get("tags", {})
    if not isinstance(tags, Mapping):
        raise TraceSchemaError(f"request {req_id!r}: tags must be a mapping")
    prefill = _parse_tokens(obj.get("prefill", []), Phase.PREFILL, req_id, 0)
    decode = _parse_tokens(obj.get("decode", []), Phase.DECODE, req_id, len(prefill))
    req = RequestTrace(
        request_id=req_id,
        tokens=tuple(prefill + decode),
        tags={str(k): str(v) for k, v in tags.items()},
    )
    validate_request(req, spec)
    return req


def read_model_header(path: str | Path) -> ModelSpec:
    """Parse only the first line of a trace file."""
    p = Path(path)
    with _open_text(p, "r") as fh:
        first = fh.readline()
    if not first.strip():
        raise TraceSchemaError(f"{p}: empty trace file, expected a model header line")
    try:
        obj = json.loads(first)
    except json.JSONDecodeError as e:
        raise TraceSchemaError(f"{p}: header line is not valid JSON: {e}") from None
    if not isinstance(obj, dict) or "model" not in obj:
        raise TraceSchemaError(f"{p}: first line must be a {{'model': ...}} header")
    return ModelSpec.from_dict(obj["model"])


def iter_requests(
    path: str | Path,
    spec: ModelSpec | None = None,
    adapter: RecordAdapter | None = None,
) -> Iterator[RequestTrace]:
    """Stream validated requests one at a time, O(1 request) memory.

    The file's model header is checked against ``spec`` when one is given
    (shape fields must match exactly).
    """
    p = Path(path)
    header = read_model_header(p)
    if spec is not None and header != spec:
        raise TraceSchemaError(
            f"{p}: file model header {header.name!r} does not match expected spec {spec.name!r}"
        )
    spec = spec or header
    with _open_text(p, "r") as fh:
        fh.readline()  # header already parsed
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceSchemaError(f"{p}:{lineno}: invalid JSON: {e}") from None
            if adapter is not None:
                obj = adapter(obj)
            yield _parse_record(obj, spec)


def load_traces(
    path: str | Path,
    spec: ModelSpec | None = None,
    *,
    strict: bool = True,
    adapter: RecordAdapter | None = None,
) -> TraceSet:
    """Load a whole trace file into an immutable TraceSet.

    strict=True raises on the first malformed record, naming request, token
    and layer. strict=False skips malformed records; each skip is logged and
    the total lands in TraceSet.skipped_records, so nothing is dropped silently.
    """
    p = Path(path)
    header = read_model_header(p)
    if spec is not None and header != spec:
        raise TraceSchemaError(
            f"{p}: file model header {header.name!r} does not match expected spec {spec.name!r}"
        )
    spec = spec or header
    requests: list[RequestTrace] = []
    skipped = 0
    with _open_text(p, "r") as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if adapter is not None:
                    obj = adapter(obj)
                requests.append(_parse_record(obj, spec))
            except TraceSchemaError as e:
                if strict:
                    raise TraceSchemaError(f"{p}:{lineno}: {e}") from None
                skipped += 1
                log.warning("%s:%d: skipping malformed record: %s", p, lineno, e)
            except json.JSONDecodeError as e:
                if strict:
                    raise TraceSchemaError(f"{p}:{lineno}: invalid JSON: {e}") from None
                skipped += 1
                log.warning("%s:%d: skipping unparsable line: %s", p, lineno, e)
    if skipped:
        log.warning("%s: skipped %d malformed record(s)", p, skipped)
    return TraceSet(model=spec, requests=tuple(requests), skipped_records=skipped)


def _dump_record(req: RequestTrace) -> str:
    rec = {
        "request_id": req.request_id,
        "tags": {k: req.tags[k] for k in sorted(req.tags)},
        "prefill": [[list(sel) for sel in tok.selections] for tok in req.prefill],
        "decode": [[list(sel) for sel in tok.selections] for tok in req.decode],
    }
    return json.dumps(rec, separators=(",", ":"), sort_keys=True)


def save_traces(ts: TraceSet, path: str | Path, extra_header: Mapping | None = None) -> None:
    """Write the canonical JSONL form; deterministic byte-for-byte.

    extra_header entries are merged into the header object next to "model"
    (e.g. provenance metadata); loaders ignore unknown header keys.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header: dict = {"model": ts.model.to_dict()}
    if extra_header:
        header.update({str(k): v for k, v in extra_header.items() if k != "model"})
    buf = io.StringIO()
    buf.write(json.dumps(header, separators=(",", ":"), sort_keys=True))
    buf.write("\n")
    for req in ts.requests:
        buf.write(_dump_record(req))
        buf.write("\n")
    data = buf.getvalue().encode("utf-8")
    if p.suffix == ".gz":
        # mtime pinned so repeated saves stay byte-identical
        with gzip.GzipFile(filename="", mode="wb", fileobj=open(p, "wb"), mtime=0) as gz:
            gz.write(data)
    else:
        with open(p, "wb") as fh:
            fh.write(data)
