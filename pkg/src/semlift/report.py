"""Text and JSON renderings of a lift trace."""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone

from .lifter import LiftConfig, LiftTrace

LEVELS = ("sigma-spl", "spl", "equation", "spec", "trace")


def assurance_text(sizes, tol: float) -> str:
    listed = ", ".join(str(s) for s in sizes)
    return f"verified at sizes {listed} with tolerance {tol:g}; parametric claim by induction (computer-algebra grade)"


def source_digest(path: str, text: str) -> dict:
    return {"path": path, "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()}


def _num(x: float):
    # JSON has no infinity
    return None if math.isinf(x) or math.isnan(x) else x


def build_report(trace: LiftTrace, path: str, text: str, config: LiftConfig, timestamp: str | None = None) -> dict:
    closed = trace.closed
    spec = trace.specification
    doc = {
        "source": source_digest(path, text),
        "entry": trace.entry,
        "status": "ok" if trace.ok else ("input-error" if trace.input_error else "lift-failure"),
        "stages": [
            {
                "rule": s.rule,
                "fragment": s.fragment,
                "input": s.input,
                "output": s.output_text,
                "note": s.note,
                "tolerance": s.tolerance,
                "checks": [{"size": n, "deviation": _num(d)} for n, d in s.checks],
            }
            for s in trace.steps
        ],
        "sigma_spl": dict(trace.sigma),
        "equation": trace.equation.render() if trace.equation else None,
        "base_case": trace.base_case,
        "closed_spl": closed.text if closed else None,
        "evidence": [{**e, "deviation": _num(e["deviation"])} for e in closed.evidence] if closed else [],
        "specification": None,
        "failures": [
            {
                "stage": f.stage,
                "reason": f.reason,
                "deviations": [{"size": n, "deviation": _num(d)} for n, d in f.deviations],
            }
            for f in trace.failures
        ],
        "diagnostics": list(trace.diagnostics),
        "trials": [
            {"fragment": t.fragment, "recognizer": t.recognizer, "outcome": t.outcome, "reason": t.reason}
            for t in trace.trials
        ],
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if spec is not None and closed is not None:
        doc["specification"] = {
            **spec.to_dict(),
            "assurance": assurance_text(closed.checked_sizes, config.tolerance),
        }
    return doc


def to_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False)


def _dev(d) -> str:
    return "inf" if d is None else f"{d:.3g}"


def render_text(doc: dict, levels=LEVELS) -> str:
    """Human-readable report; carries the same facts as the JSON document."""
    out = [f"source: {doc['source']['path']} (sha256 {doc['source']['sha256'][:16]})", f"entry: {doc['entry']}"]
    out.append(f"status: {doc['status']}")
    for d in doc["diagnostics"]:
        out.append(f"  {d}")
    if "sigma-spl" in levels and doc["sigma_spl"]:
        out += ["", "Sigma-SPL"]
        for frag, term in doc["sigma_spl"].items():
            out.append(f"  {frag}: {term}")
            note = next((s["note"] for s in doc["stages"] if s["fragment"] == frag and s["note"]), "")
            if note.startswith("scatter"):
                out.append(f"    {note}")
    if "spl" in levels and doc["stages"]:
        out += ["", "SPL components"]
        for s in doc["stages"]:
            if s["rule"] != "recursive-equation":
                out.append(f"  {s['fragment']} [{s['rule']}]: {s['output']}")
    if "equation" in levels and doc["equation"]:
        out += ["", "Recursive equation", f"  {doc['equation']}"]
        base = doc["base_case"]
        if base:
            for c in base["candidates"]:
                out.append(f"  base case n={base['size']}: {c['candidate']} deviation {_dev(c['deviation'])}")
    if "spec" in levels:
        if doc["closed_spl"]:
            out += ["", "Closed SPL", f"  {doc['closed_spl']}"]
        if doc["specification"]:
            spec = doc["specification"]
            out += ["", "Specification", f"  {spec['text']}", f"  assurance: {spec['assurance']}"]
    if "trace" in levels:
        out += ["", "Soundness evidence", f"  {'step':<20} {'fragment':<48} {'size':>5} {'deviation':>10}"]
        for s in doc["stages"]:
            for c in s["checks"]:
                out.append(f"  {s['rule']:<20} {s['fragment'][:48]:<48} {c['size']:>5} {_dev(c['deviation']):>10}")
        for e in doc["evidence"]:
            out.append(f"  {e['check']:<20} {'closed SPL':<48} {e['size']:>5} {_dev(e['deviation']):>10}")
    out += ["", "Failures"]
    if not doc["failures"]:
        out.append("  none")
    for f in doc["failures"]:
        out.append(f"  [{f['stage']}] {f['reason']}")
        for d in f["deviations"]:
            out.append(f"    size {d['size']:>5}  deviation {_dev(d['deviation'])}")
    return "\n".join(out) + "\n"
