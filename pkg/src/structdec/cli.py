"""Command-line client for the decoding service.

Every command builds a self-contained request from local config files and
posts it to the service — by default an in-process instance, or a remote
one via ``--server``. File handling (path resolution, dataset parsing,
atomic output writes, run manifests) lives here; all computation happens
behind the HTTP boundary.

Exit codes: 0 success, 1 configuration error (missing files, malformed
configs or datasets, rejected requests), 2 output produced but flagged
invalid (non-eos termination, zero-mass fallback steps, or a prompt on
which every candidate realization is invalid).
"""

from __future__ import annotations

import datetime
import json
import os
import sys
import tempfile
from pathlib import Path

import click
import httpx

from . import __version__
from .analysis import report_to_csv
from .errors import ConfigError

REMOTE_ENDPOINT_ENV = "STRUCTDEC_REMOTE_ENDPOINT"
CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FLAGGED = 2


class ServiceClient:
    """POSTs to a remote server, or to an in-process app when none given."""

    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=300.0)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise ConfigError(f"service unreachable: {exc}") from exc
        if resp.status_code != 200:
            try:
                detail = resp.json()
            except ValueError:
                detail = resp.text
            raise ConfigError(f"service rejected request ({resp.status_code}): {detail}")
        return resp.json()


# --- file plumbing ---

def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(out_path: Path, config_path: str | None, seeds: list[int],
                    outputs: list[str]) -> None:
    manifest = {
        "config_path": config_path,
        "resolved_seeds": seeds,
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "output_paths": outputs,
    }
    _atomic_write(out_path.with_suffix(out_path.suffix + ".manifest.json"),
                  json.dumps(manifest, indent=2) + "\n")


def _read_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _vocab_payload(path: Path) -> dict:
    doc = _read_json(path)
    if "tokens" not in doc or "eos" not in doc:
        raise ConfigError(f"{path} must contain 'tokens' and 'eos'")
    return {"tokens": doc["tokens"], "eos": doc["eos"]}


def _model_payload(path: Path) -> dict:
    spec = _read_json(path)
    override = os.environ.get(REMOTE_ENDPOINT_ENV)
    if override and spec.get("kind") == "remote":
        spec = dict(spec, endpoint=override)
    return spec


def _constraint_payload(ref: str, base: Path) -> dict:
    """Resolve a constraint reference: inline ``regex:PATTERN`` or a file.

    File kind is inferred from the suffix: ``.bnf``/``.lark``/``.g`` are
    grammars, ``.json``/``.schema`` are JSON schemas, ``.regex``/``.re``
    hold a regex pattern.
    """
    if ref.startswith("regex:"):
        return {"kind": "regex", "source": ref[len("regex:"):]}
    path = (base / ref).resolve() if not os.path.isabs(ref) else Path(ref)
    try:
        source = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read constraint {path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix in (".bnf", ".lark", ".g"):
        return {"kind": "cfg", "source": source}
    if suffix in (".json", ".schema"):
        return {"kind": "json_schema", "source": source}
    if suffix in (".regex", ".re"):
        return {"kind": "regex", "source": source.strip()}
    raise ConfigError(f"cannot infer constraint kind from suffix {suffix!r} ({path})")


def _load_dataset(path: Path) -> list[dict]:
    rows = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"dataset line {lineno}: invalid JSON: {exc}") from exc
        missing = [k for k in ("id", "prompt", "gold", "constraint", "format")
                   if k not in row]
        if missing:
            rid = row.get("id", f"line {lineno}")
            raise ConfigError(f"dataset row {rid}: missing fields {missing}")
        rows.append(row)
    if not rows:
        raise ConfigError(f"dataset {path} is empty")
    return rows


def _dataset_payload(path: Path) -> list[dict]:
    base = path.parent
    return [{
        "id": row["id"], "prompt": row["prompt"], "gold": row["gold"],
        "constraint": _constraint_payload(row["constraint"], base),
        "format": row["format"],
    } for row in _load_dataset(path)]


def _load_config(path: Path) -> tuple[dict, Path]:
    cfg = _read_json(path)
    version = cfg.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version!r} "
                          f"(expected {CONFIG_VERSION})")
    return cfg, path.parent


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return cfg[key]


def _decode_settings(cfg: dict, where: str) -> dict:
    out = {"max_len": _require(cfg, "max_len", where)}
    for key in ("policy", "temperature", "seed"):
        if key in cfg:
            out[key] = cfg[key]
    return out


# --- commands ---

@click.group()
@click.version_option(__version__)
@click.option("--server", default=None, envvar="STRUCTDEC_SERVER",
              help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Constrained decoding toolkit: decode, draft-then-constrain, evaluate."""
    ctx.obj = {"server": server}


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


def _fail(message: str) -> "SystemExit":
    click.echo(f"error: {message}", err=True)
    return SystemExit(EXIT_CONFIG)


@main.command("decode")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--vocab", "vocab_path", required=True, type=click.Path())
@click.option("--prompt", default="")
@click.option("--constraint", "constraint_ref", default=None,
              help="Constraint file or inline regex:PATTERN.")
@click.option("--policy", default="greedy", type=click.Choice(["greedy", "sample"]))
@click.option("--max-len", required=True, type=int)
@click.option("--temperature", default=1.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--trace-out", "trace_out", required=True, type=click.Path())
@click.pass_context
def cmd_decode(ctx, model_path, vocab_path, prompt, constraint_ref, policy,
               max_len, temperature, seed, trace_out):
    """Run one (optionally constrained) decode and write a JSONL trace."""
    try:
        payload = {
            "vocab": _vocab_payload(Path(vocab_path)),
            "model": _model_payload(Path(model_path)),
            "prompt": prompt,
            "constraint": (_constraint_payload(constraint_ref, Path.cwd())
                           if constraint_ref else None),
            "config": {"max_len": max_len, "policy": policy,
                       "temperature": temperature, "seed": seed},
        }
        body = _client(ctx).post("/decode", payload)
    except ConfigError as exc:
        raise _fail(str(exc))
    out = Path(trace_out)
    _atomic_write(out, body["trace_jsonl"])
    _write_manifest(out, None, [seed], [str(out)])
    trace = body["trace"]
    click.echo(f"text: {trace['text']!r}")
    click.echo(f"terminated: {trace['terminated']}  "
               f"projection_tax: {trace['projection_tax']:.6f}")
    flagged = (trace["terminated"] != "eos" or trace["zero_mass_steps"] > 0
               or trace["constraint_satisfied"] is False)
    if flagged:
        click.echo("output flagged invalid", err=True)
        raise SystemExit(EXIT_FLAGGED)


@main.command("dccd")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.pass_context
def cmd_dccd(ctx, config_path):
    """Run draft-then-constrain per prompt from a config file."""
    try:
        cfg, base = _load_config(Path(config_path))
        where = str(config_path)
        vocab = _vocab_payload(base / _require(cfg, "vocab", where))
        draft_model = _model_payload(base / _require(cfg, "draft_model", where))
        proj_model = (_model_payload(base / cfg["proj_model"])
                      if "proj_model" in cfg else None)
        constraint = _constraint_payload(_require(cfg, "constraint", where), base)
        prompts = _require(cfg, "prompts", where)
        cfg_draft = _decode_settings(_require(cfg, "cfg_draft", where),
                                     f"{where}:cfg_draft")
        cfg_proj = _decode_settings(_require(cfg, "cfg_proj", where),
                                    f"{where}:cfg_proj")
        out = base / _require(cfg, "out", where)
        client = _client(ctx)
        results = []
        for prompt in prompts:
            payload = {
                "vocab": vocab, "draft_model": draft_model, "proj_model": proj_model,
                "prompt": prompt, "constraint": constraint,
                "template": cfg.get("template"), "K": cfg.get("K", 1),
                "selection_rule": cfg.get("selection_rule",
                                          "cumulative_log_feasible_mass"),
                "cfg_draft": cfg_draft, "cfg_proj": cfg_proj,
                "answer_format": cfg.get("answer_format"),
            }
            body = client.post("/dccd", payload)
            results.append({"prompt": prompt, **body})
    except ConfigError as exc:
        raise _fail(str(exc))
    _atomic_write(out, json.dumps(results, indent=2, sort_keys=True) + "\n")
    seeds = [cfg_draft.get("seed", 0), cfg_proj.get("seed", 0)]
    _write_manifest(out, str(config_path), seeds, [str(out)])
    n_invalid = sum(1 for r in results if r["all_realizations_invalid"])
    click.echo(f"wrote {out} ({len(results)} prompts, "
               f"{n_invalid} with no valid realization)")
    if n_invalid:
        raise SystemExit(EXIT_FLAGGED)


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--method", required=True,
              type=click.Choice(["cd", "dccd", "unconstrained"]))
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--report-out", "report_out", required=True, type=click.Path(),
              help="Basename for the .json and .csv reports.")
@click.pass_context
def cmd_eval(ctx, dataset_path, method, config_path, report_out):
    """Strict-evaluate a dataset under one method; write CSV+JSON reports."""
    try:
        cfg, base = _load_config(Path(config_path))
        where = str(config_path)
        payload = {
            "vocab": _vocab_payload(base / _require(cfg, "vocab", where)),
            "model": _model_payload(base / _require(cfg, "model", where)),
            "draft_model": (_model_payload(base / cfg["draft_model"])
                            if "draft_model" in cfg else None),
            "dataset": _dataset_payload(Path(dataset_path)),
            "method": method,
            "config": _decode_settings(_require(cfg, "config", where),
                                       f"{where}:config"),
            "cfg_draft": (_decode_settings(cfg["cfg_draft"], f"{where}:cfg_draft")
                          if "cfg_draft" in cfg else None),
            "template": cfg.get("template"),
            "K": cfg.get("K", 1),
            "selection_rule": cfg.get("selection_rule",
                                      "cumulative_log_feasible_mass"),
        }
        body = _client(ctx).post("/eval", payload)
    except ConfigError as exc:
        raise _fail(str(exc))
    out = Path(report_out)
    json_path = out.with_suffix(".json")
    csv_path = out.with_suffix(".csv")
    _atomic_write(json_path, json.dumps(body, indent=2, sort_keys=True) + "\n")
    _atomic_write(csv_path, report_to_csv(body["report"]))
    _write_manifest(json_path, str(config_path),
                    [payload["config"].get("seed", 0)],
                    [str(json_path), str(csv_path)])
    entry = body["report"]["methods"][method]
    click.echo(f"{method}: strict={entry['strict_accuracy']:.4f} "
               f"valid={entry['validity_rate']:.4f} "
               f"correct={entry['correctness_rate']:.4f} over {entry['count']} rows")


@main.command("scale")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--n-values", "n_values", required=True,
              help="Comma-separated odd pool sizes, e.g. 1,3,5.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def cmd_scale(ctx, config_path, n_values, out_path):
    """Majority-vote scaling over nested candidate pools; one CSV row per (method, n)."""
    try:
        try:
            ns = [int(x) for x in n_values.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --n-values: {exc}") from exc
        if not ns or any(n < 1 or n % 2 == 0 for n in ns):
            raise ConfigError("n values must be odd positive integers")
        cfg, base = _load_config(Path(config_path))
        where = str(config_path)
        payload = {
            "vocab": _vocab_payload(base / _require(cfg, "vocab", where)),
            "model": _model_payload(base / _require(cfg, "model", where)),
            "draft_model": (_model_payload(base / cfg["draft_model"])
                            if "draft_model" in cfg else None),
            "dataset": _dataset_payload(base / _require(cfg, "dataset", where)),
            "methods": cfg.get("methods", ["cd", "dccd"]),
            "n_values": ns,
            "config": _decode_settings(_require(cfg, "config", where),
                                       f"{where}:config"),
            "cfg_draft": (_decode_settings(cfg["cfg_draft"], f"{where}:cfg_draft")
                          if "cfg_draft" in cfg else None),
            "template": cfg.get("template"),
        }
        body = _client(ctx).post("/scale", payload)
    except ConfigError as exc:
        raise _fail(str(exc))
    lines = ["method,n,strict_accuracy,validity_rate"]
    for cell in body["cells"]:
        lines.append(f"{cell['method']},{cell['n']},"
                     f"{cell['strict_accuracy']},{cell['validity_rate']}")
    out = Path(out_path)
    _atomic_write(out, "\n".join(lines) + "\n")
    _write_manifest(out, str(config_path), [payload["config"].get("seed", 0)],
                    [str(out)])
    click.echo(f"wrote {out} ({len(body['cells'])} rows)")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--model", "model_path", default=None, type=click.Path(),
              help="Model spec to expose at /v1/logprobs.")
@click.option("--vocab", "vocab_path", default=None, type=click.Path(),
              help="Vocabulary for --model.")
def cmd_serve(host, port, model_path, vocab_path):
    """Run the HTTP service (uvicorn)."""
    import uvicorn

    from .models import model_from_spec
    from .service import create_app
    from .vocab import build_vocabulary

    model = None
    try:
        if model_path is not None:
            if vocab_path is None:
                raise ConfigError("--model requires --vocab")
            vdoc = _vocab_payload(Path(vocab_path))
            vocab = build_vocabulary(vdoc["tokens"], eos=vdoc["eos"])
            model = model_from_spec(_model_payload(Path(model_path)), vocab)
    except ConfigError as exc:
        raise _fail(str(exc))
    uvicorn.run(create_app(model), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
