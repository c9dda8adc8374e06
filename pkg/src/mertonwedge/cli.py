"""Command-line surface: flag and config parsing, the four commands,
and deterministic serialization of their outputs.

Every number is rendered with 17 significant digits, enough for a
binary64 value to survive a round trip through text, and the renderers
walk their structures in fixed order, so identical configurations
produce byte-identical output.  There is no environment-variable
configuration and no interactive mode; everything an invocation does is
determined by its flags and config file.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 invariant
violation detected while validating.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .errors import (BadRange, HZero, IllPosed, MertonWedgeError,
                     OutOfRange, SignChange)
from .expansion import build_bundle
from .freeboundary import (Endowment, locate_xhat, solve_free_boundary,
                           value_u, wedge_slopes)
from .hjbcheck import (QUANTITIES, ValidationReport, ValidationRow,
                       cross_validate)
from .model import MarketParams

_COMMANDS = ("solve", "series", "value", "validate")
_CONFIG_KEYS = ("mu", "sigma", "delta", "p", "lambda", "order",
                "eta_b", "eta_s", "s0")
_FLAGS = {
    "--mu": "mu", "--sigma": "sigma", "--delta": "delta", "--p": "p",
    "--lambda": "lambda", "--order": "order", "--eta-b": "eta_b",
    "--eta-s": "eta_s", "--s0": "s0", "--lambda-grid": "lambda_grid",
    "--config": "config", "--out": "out", "--format": "format",
}
_MAX_ORDER = 16


class UsageError(Exception):
    """Invalid command line or config file; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved invocation."""

    command: str
    params: MarketParams
    order: int | None = None
    endowment: Endowment | None = None
    lambda_grid: tuple | None = None
    out: str | None = None
    fmt: str = "json"


def _parse_number(key: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"{key} expects a number, got {text!r}") from None
    if not np.isfinite(value):
        raise UsageError(f"{key} must be finite, got {text!r}")
    return value


def _read_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(
                f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def parse_cli(argv) -> RunConfig:
    """Resolve an argument vector into a RunConfig.

    Flags override config-file values.  Anything malformed or missing
    raises UsageError, which the entry point turns into exit code 2.
    """
    if not argv:
        raise UsageError(
            f"expected a command: one of {', '.join(_COMMANDS)}")
    command = argv[0]
    if command not in _COMMANDS:
        raise UsageError(f"unknown command {command!r}")

    flags = {}
    i = 1
    while i < len(argv):
        name = argv[i]
        if name not in _FLAGS:
            raise UsageError(f"unknown flag {name!r}")
        if i + 1 >= len(argv):
            raise UsageError(f"flag {name} is missing its value")
        flags[_FLAGS[name]] = argv[i + 1]
        i += 2

    merged = _read_config(flags["config"]) if "config" in flags else {}
    merged.update(
        {k: v for k, v in flags.items()
         if k not in ("config", "out", "format", "lambda_grid")})

    for key in ("mu", "sigma", "delta", "p"):
        if key not in merged:
            raise UsageError(f"missing required parameter --{key}")
    lam_text = merged.get("lambda")
    if command in ("solve", "value") and lam_text is None:
        raise UsageError(f"{command} requires --lambda")
    lam = _parse_number("lambda", lam_text) if lam_text is not None else 0.0
    try:
        params = MarketParams(
            mu=_parse_number("mu", merged["mu"]),
            sigma=_parse_number("sigma", merged["sigma"]),
            delta=_parse_number("delta", merged["delta"]),
            p=_parse_number("p", merged["p"]),
            lam=lam)
    except (BadRange, IllPosed) as exc:
        raise UsageError(str(exc)) from None

    order = None
    if command in ("series", "validate"):
        if "order" not in merged:
            raise UsageError(f"{command} requires --order")
        try:
            order = int(merged["order"])
        except ValueError:
            raise UsageError(
                f"order expects an integer, got {merged['order']!r}") \
                from None
        if not 1 <= order <= _MAX_ORDER:
            raise UsageError(f"order {order} outside 1..{_MAX_ORDER}")

    endowment = None
    if command == "value":
        if "eta_b" not in merged or "eta_s" not in merged:
            raise UsageError("value requires --eta-b and --eta-s")
        endowment = Endowment(
            eta_B=_parse_number("eta_b", merged["eta_b"]),
            eta_S=_parse_number("eta_s", merged["eta_s"]),
            S0=_parse_number("s0", merged.get("s0", "1.0")))
        if endowment.S0 <= 0.0:
            raise UsageError(f"s0 must be positive, got {endowment.S0}")

    grid = None
    if "lambda_grid" in flags:
        if command != "validate":
            raise UsageError("--lambda-grid only applies to validate")
        try:
            grid = tuple(float(tok) for tok in
                         flags["lambda_grid"].split(","))
        except ValueError:
            raise UsageError(
                f"--lambda-grid expects a comma list of numbers, got "
                f"{flags['lambda_grid']!r}") from None
        if not grid or any(not 0.0 < v < 1.0 for v in grid):
            raise UsageError("--lambda-grid values must lie in (0, 1)")

    fmt = flags.get("format", "json")
    if fmt not in ("json", "csv"):
        raise UsageError(f"unknown format {fmt!r}")
    return RunConfig(command=command, params=params, order=order,
                     endowment=endowment, lambda_grid=grid,
                     out=flags.get("out"), fmt=fmt)


def _num(value) -> str:
    return "%.17g" % float(value)


def _json_value(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _num(value) if np.isfinite(value) else "null"
    if isinstance(value, dict):
        inner = ", ".join(f'"{k}": {_json_value(v)}'
                          for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _render_json(payload: dict) -> str:
    return _json_value(payload) + "\n"


def _render_csv(header, rows) -> str:
    def cell(value):
        if value is None:
            return ""
        if isinstance(value, str):
            return value
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        return _num(value)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _solve_payload(config: RunConfig) -> dict:
    sol = solve_free_boundary(config.params)
    slopes = wedge_slopes(sol)
    return {
        "x_lo": sol.x_lo,
        "x_hi": sol.x_hi,
        "pi_lo": slopes.pi_lo,
        "pi_hi": slopes.pi_hi,
        "integral_residual": sol.integral_residual,
    }


def _series_blocks(config: RunConfig):
    bundle = build_bundle(config.params, config.order)
    n = config.order
    table = [{"i": i,
              "d_i": bundle.alpha_series.coeffs[i],
              "s_lo_i": bundle.wedge_lo.coeffs[i],
              "s_hi_i": bundle.wedge_hi.coeffs[i]}
             for i in range(n + 1)]
    return bundle, table


def _series_payload(config: RunConfig) -> dict:
    bundle, table = _series_blocks(config)
    return {
        "order": config.order,
        "table": table,
        "a": [list(row) for row in bundle.g_series.coeffs],
        "b": list(bundle.beta_series.coeffs),
        "c": list(bundle.c_series.coeffs),
    }


def _series_csv(config: RunConfig) -> str:
    bundle, table = _series_blocks(config)
    rows = []
    for entry in table:
        i = entry["i"]
        rows.append(("d", i, 0, entry["d_i"]))
        rows.append(("s_lo", i, 0, entry["s_lo_i"]))
        rows.append(("s_hi", i, 0, entry["s_hi_i"]))
    coeffs = bundle.g_series.coeffs
    for i in range(coeffs.shape[0]):
        for j in range(coeffs.shape[1]):
            rows.append(("a", i, j, coeffs[i, j]))
    for i, v in enumerate(bundle.beta_series.coeffs):
        rows.append(("b", i, 0, v))
    for i, v in enumerate(bundle.c_series.coeffs):
        rows.append(("c", i, 0, v))
    return _render_csv(("block", "i", "j", "value"), rows)


def _value_payload(config: RunConfig) -> dict:
    sol = solve_free_boundary(config.params)
    endow = config.endowment
    xhat = locate_xhat(sol, endow)
    slopes = wedge_slopes(sol)
    wealth = endow.eta_B + endow.eta_S * endow.S0
    proportion = endow.eta_S * endow.S0 / wealth
    # same comparisons as the trade locator, so the label always matches
    # the branch that produced x_hat
    if proportion >= slopes.pi_hi:
        case = "above"
    elif proportion <= slopes.pi_lo:
        case = "below"
    else:
        case = "interior"
    return {
        "u": value_u(sol, endow),
        "x_hat": xhat,
        "case": case,
    }


_ROW_TAIL = ("hjb_max_residual", "h_min_abs", "f_err_lo", "f_err_hi")


def _validate_header(n: int):
    head = ["lambda", "x_lo_num", "x_hi_num", "pi_lo_num", "pi_hi_num",
            "u_num"]
    for name in QUANTITIES:
        for j in range(1, n + 1):
            head.append(f"{name}_ord{j}")
            head.append(f"{name}_diff{j}")
    head.extend(_ROW_TAIL)
    head.extend(("h_sign", "error"))
    return head


def _validate_csv(report: ValidationReport) -> str:
    rows = []
    for row in report.rows:
        cells = [row.lam, row.x_lo, row.x_hi, row.pi_lo, row.pi_hi, row.u]
        for name in QUANTITIES:
            for j in range(1, report.order + 1):
                cells.append(row.predictions[name][j - 1])
                cells.append(row.differences[name][j - 1])
        cells.extend(getattr(row, f) for f in _ROW_TAIL)
        cells.append(row.h_sign)
        cells.append(row.error if row.error is not None else "")
        rows.append(cells)
    return _render_csv(_validate_header(report.order), rows)


def report_to_json(report: ValidationReport) -> str:
    """ValidationReport as deterministic JSON, one field per field."""
    params = report.params
    payload = {
        "params": {"mu": params.mu, "sigma": params.sigma,
                   "delta": params.delta, "p": params.p,
                   "lam": params.lam},
        "order": report.order,
        "rows": [
            {
                "lambda": row.lam,
                "x_lo": row.x_lo, "x_hi": row.x_hi,
                "pi_lo": row.pi_lo, "pi_hi": row.pi_hi, "u": row.u,
                "predictions": {name: list(row.predictions[name])
                                for name in QUANTITIES},
                "differences": {name: list(row.differences[name])
                                for name in QUANTITIES},
                "hjb_max_residual": row.hjb_max_residual,
                "h_min_abs": row.h_min_abs,
                "h_sign": row.h_sign,
                "f_err_lo": row.f_err_lo,
                "f_err_hi": row.f_err_hi,
                "error": row.error,
            }
            for row in report.rows
        ],
    }
    return _render_json(payload)


def report_from_json(text: str) -> ValidationReport:
    """Parse report_to_json output back into a ValidationReport."""
    import json

    def num(value):
        return float("nan") if value is None else float(value)

    data = json.loads(text)
    params = MarketParams(**data["params"])
    rows = []
    for row in data["rows"]:
        rows.append(ValidationRow(
            lam=num(row["lambda"]),
            x_lo=num(row["x_lo"]), x_hi=num(row["x_hi"]),
            pi_lo=num(row["pi_lo"]), pi_hi=num(row["pi_hi"]),
            u=num(row["u"]),
            predictions={name: [num(v) for v in row["predictions"][name]]
                         for name in QUANTITIES},
            differences={name: [num(v) for v in row["differences"][name]]
                         for name in QUANTITIES},
            hjb_max_residual=num(row["hjb_max_residual"]),
            h_min_abs=num(row["h_min_abs"]),
            h_sign=num(row["h_sign"]),
            f_err_lo=num(row["f_err_lo"]),
            f_err_hi=num(row["f_err_hi"]),
            error=row["error"]))
    return ValidationReport(params=params, order=data["order"],
                            rows=tuple(rows))


def _validate_invariants_hold(report: ValidationReport) -> bool:
    quant = report.params.quantities()
    scale = max(1.0, abs(quant.y_N), quant.x_N)
    h_floor = 0.1 * abs(quant.q * quant.y_N)
    for row in report.rows:
        if row.error is not None:
            continue
        if not row.hjb_max_residual < 1e-8 * scale:
            return False
        if not row.h_min_abs > h_floor:
            return False
        if not (row.f_err_lo < 1e-10 and row.f_err_hi < 1e-10):
            return False
    return True


def run(config: RunConfig) -> int:
    """Execute one resolved invocation and write its report."""
    try:
        if config.command == "solve":
            payload = _solve_payload(config)
            text = (_render_json(payload) if config.fmt == "json" else
                    _render_csv(("x_lo", "x_hi", "pi_lo", "pi_hi",
                                 "integral_residual"),
                                [tuple(payload.values())]))
        elif config.command == "series":
            text = (_render_json(_series_payload(config))
                    if config.fmt == "json" else _series_csv(config))
        elif config.command == "value":
            payload = _value_payload(config)
            text = (_render_json(payload) if config.fmt == "json" else
                    _render_csv(("u", "x_hat", "case"),
                                [tuple(payload.values())]))
        else:
            report = cross_validate(config.params, config.lambda_grid,
                                    config.order)
            text = (report_to_json(report) if config.fmt == "json"
                    else _validate_csv(report))
            _write(config.out, text)
            if any(row.error is not None for row in report.rows):
                return 3
            if not _validate_invariants_hold(report):
                print("validate: solution invariants violated; see "
                      "report", file=sys.stderr)
                return 4
            return 0
    except (BadRange, OutOfRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HZero, SignChange) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except MertonWedgeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    _write(config.out, text)
    return 0


def _write(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def main(argv=None) -> int:
    """Console entry point."""
    args = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_cli(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
