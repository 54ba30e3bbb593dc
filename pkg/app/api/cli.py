# api/cli.py
"""Command-line front end: JSON run config in, CSV/JSON results out."""
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import click

from app.api.schemas import RunConfig
from app.core.errors import ErrorHandler
from app.core.response import ServiceResponse, ServiceStatus
from app.core.settings import logger_config, settings
from app.infrastructure.writers import (config_sha256, render_csv, render_json, sidecar, to_jsonable, write_csv,
                                     write_json)
from app.use_cases.analysis_services import AnalysisService
from app.use_cases.simulation_services import SimulationService

logger = logging.getLogger(__name__)

# команды, результат которых по умолчанию документ, а не таблица
_DOCUMENT_COMMANDS = {"optimal", "sd-params", "federated"}
_FIELD_VALUE = ["field", "value"]
_ATOM_FIELDS = ["measure", "label", "location", "mass"]


def load_config(path: str, seed: int | None = None, threads: int | None = None) -> RunConfig:
    """Read and validate the run config; CLI overrides are applied before validation."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    return RunConfig.model_validate(raw)


def _flatten(doc, prefix: str = "") -> list[dict]:
    """Document -> field/value rows for --format csv"""
    rows: list[dict] = []
    if isinstance(doc, dict):
        for k, v in doc.items():
            rows += _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(doc, (list, tuple)) and any(isinstance(v, (dict, list, tuple)) for v in doc):
        for i, v in enumerate(doc):
            rows += _flatten(v, f"{prefix}[{i}]")
    elif isinstance(doc, (list, tuple)):
        rows += [{"field": f"{prefix}[{i}]", "value": v} for i, v in enumerate(doc)]
    else:
        rows.append({"field": prefix, "value": doc})
    return rows


def emit(command: str, data: dict, cfg_hash: str, out: str | None, fmt: str | None) -> None:
    fmt = fmt or ("json" if command in _DOCUMENT_COMMANDS else "csv")
    data = to_jsonable(data)
    if command in _DOCUMENT_COMMANDS:
        if fmt == "json":
            _write_or_print(out, render_json(data, cfg_hash), lambda p: write_json(p, data, cfg_hash))
        else:
            rows = _flatten(data)
            _write_or_print(out, render_csv(rows, cfg_hash, _FIELD_VALUE),
                            lambda p: write_csv(p, rows, cfg_hash, _FIELD_VALUE))
        return

    rows, atoms = data.get("rows", []), data.get("atoms")
    if fmt == "json":
        doc = {"rows": rows} if atoms is None else {"rows": rows, "atoms": atoms}
        _write_or_print(out, render_json(doc, cfg_hash), lambda p: write_json(p, doc, cfg_hash))
        return
    _write_or_print(out, render_csv(rows, cfg_hash), lambda p: write_csv(p, rows, cfg_hash))
    if atoms is not None:
        _write_or_print(out and str(sidecar(out, "atoms")), render_csv(atoms, cfg_hash, _ATOM_FIELDS),
                        lambda p: write_csv(p, atoms, cfg_hash, _ATOM_FIELDS))


def _write_or_print(out: str | None, text: str, write: Callable[[str], object]) -> None:
    if out:
        write(out)
    else:
        click.echo(text, nl=False)


def run(ctx: click.Context, command: str, call: Callable[[RunConfig], ServiceResponse]) -> None:
    """Load config, call the service, write output, exit with the status code."""
    opts = ctx.obj
    try:
        cfg = load_config(opts["config"], opts["seed"], opts["threads"])
    except Exception as e:
        info = ErrorHandler(logger).handle(e, context="config")
        click.echo(f"error: {info.message}", err=True)
        ctx.exit(ServiceResponse(status=info.status).exit_code)

    response = call(cfg)
    if not response.ok:
        click.echo(f"error: {response.error}", err=True)
        ctx.exit(response.exit_code)
    # число потоков не влияет на результат и не входит в хэш
    cfg_hash = config_sha256(cfg.model_dump(mode="json", exclude={"threads"}))
    try:
        emit(command, response.data, cfg_hash, opts["out"], opts["fmt"])
    except OSError as e:
        info = ErrorHandler(logger).handle(e, context="output")
        click.echo(f"error: {info.message}", err=True)
        ctx.exit(ServiceResponse(status=ServiceStatus.error).exit_code)


def _common(f):
    f = click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="JSON run config")(f)
    f = click.option("--out", "out", default=None, type=click.Path(dir_okay=False), help="output file (stdout if omitted)")(f)
    f = click.option("--format", "fmt", default=None, type=click.Choice(["csv", "json"]), help="output format")(f)
    f = click.option("--threads", "threads", default=None, type=click.IntRange(min=1), help="worker threads")(f)
    f = click.option("--seed", "seed", default=None, type=click.IntRange(0, 2 ** 64 - 1), help="override config seed")(f)
    f = click.option("-v", "--verbose", count=True, help="-v info, -vv debug")(f)
    return f


def _command(name: str, call: Callable[[RunConfig], ServiceResponse], help_text: str):
    @click.pass_context
    def handler(ctx: click.Context, config, out, fmt, threads, seed, verbose):
        level = {0: None, 1: "INFO"}.get(verbose, "DEBUG")
        logger_config.setup_logger(level)
        ctx.obj = {"config": config, "out": out, "fmt": fmt, "threads": threads, "seed": seed}
        run(ctx, name, call)

    handler.__name__ = name.replace("-", "_")
    return cli.command(name=name, help=help_text)(_common(handler))


@click.group(help="Spectral shrinkage, self-distillation and federated optima under spiked covariance.")
@click.version_option(settings.APP_VERSION, prog_name=settings.APP_NAME)
def cli() -> None:
    pass


_analysis = AnalysisService()
_simulation = SimulationService()

_command("measure", _analysis.measure, "Tabulate MP and spiked densities plus the atoms of every measure.")
_command("risk", _analysis.risk, "Limiting prediction/estimation risks for the rules in the 'risk' block.")
_command("optimal", _analysis.optimal, "Optimal rules f*_pred / f*_est with SD parameters and self-checks.")
_command("sd-params", _analysis.sd_params, "Self-distillation parameters realising the optimal rules.")
_command("federated", _analysis.federated,
         "K-client optimum: b^(K), rho* and a 'pred' block for the local rule, shaped like the optimal command's.")
_command("simulate", _simulation.simulate, "Monte Carlo risks of the 'simulate' estimators vs their limits.")
_command("sweep", _simulation.sweep, "Sweep delta_j or sigma_eps_sq and tabulate risks, SD parameters or b0.")


def main(argv: list[str] | None = None) -> int:
    try:
        # без standalone_mode click возвращает код из ctx.exit, а не бросает Exit
        rv = cli.main(args=argv, prog_name=settings.APP_NAME, standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        e.show()
        return ServiceResponse(status=ServiceStatus.invalid_config).exit_code
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
