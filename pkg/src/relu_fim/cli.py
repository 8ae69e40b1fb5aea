"""Command-line entry point: generate, build, spectrum, certify, reproduce.

Settings come from a flat ``key = value`` config file (``--config``) and from
flags; flags win. Outputs go to ``--output-dir``, then ``$RELU_FIM_OUTPUT``,
then ``./relu_fim_out``. Exit codes: 0 success, 1 usage error, 2 domain
error, 3 certificate failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .bounds import certify_run, observed_delta, xi_of_d
from .decomposition import assemble_approx, basis_geometry, build_basis, quotients_csv, rayleigh_quotients
from .empirical import empirical_J
from .exceptions import ConvergenceError, DenseCapError, DimensionError, DomainError, RunMismatchError
from .io import default_output_dir, dump_json, load_kernel, load_weights, save_kernel, save_weights, write_text
from .kernel import ClosedFormOperator, SeriesSpec, closed_form_J, series_J
from .spectrum import analyze_spectrum, group_sizes
from .validation import DEFAULT_DENSE_CAP, check_dense_cap
from .weights import column_geometry, generate_weights

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_CERT = 0, 1, 2, 3
SOURCES = ("closed", "series", "empirical", "approx")

FIGURES = {
    "fig1": {"source": "empirical", "d": 10, "p": 10_000, "n": 100_000},
    "fig2": {"source": "closed", "d": 5, "p": 10_000},
    "fig3": {"source": "closed", "d": 10, "p": 10_000},
    "fig4": {"source": "closed", "d": 20, "p": 10_000},
    "fig5": {"source": "closed", "d": 50, "p": 10_000},
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    d: int | None = None
    p: int | None = None
    n: int = 100_000
    seed: int = 0
    sigma2: float = 1.0
    eta: float = 0.25
    delta: float | None = None  # None: certify at the observed delta*
    C: float = 1.0
    series_N: int = 64
    dense_cap: int = DEFAULT_DENSE_CAP
    topk: int | None = None
    output_dir: str | None = None
    matrix_source: str = "closed"
    workers: int = 1
    threads: int = 1

    def serialize(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls(**parse_config_text(text))

    def out(self) -> Path:
        return Path(self.output_dir) if self.output_dir else default_output_dir()


def _field_types() -> dict:
    types = {}
    for f in fields(RunConfig):
        t = str(f.type)
        types[f.name] = int if t.startswith("int") else float if t.startswith("float") else str
    return types


def parse_config_text(text: str) -> dict:
    types = _field_types()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        if value.lower() == "none":
            out[key] = None
            continue
        try:
            out[key] = types[key](value)
        except ValueError:
            raise UsageError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sp):
    sp.add_argument("--config", help="flat key = value file; flags override it")
    sp.add_argument("--d", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--dense-cap", dest="dense_cap", type=int)
    sp.add_argument("--threads", type=int, help="BLAS and sampling threads")
    sp.add_argument("--weights", help="weight file written by 'generate'")


def _add_matrix_opts(sp):
    sp.add_argument("--source", dest="matrix_source", choices=SOURCES)
    sp.add_argument("--n", type=int, help="samples for the empirical source")
    sp.add_argument("--series-N", dest="series_N", type=int)
    sp.add_argument("--sigma2", type=float)
    sp.add_argument("--workers", type=int, help="sampling substreams (changes the draws)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relu-fim", description="Second-moment / Fisher matrices of random ReLU features")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="draw a weight matrix")
    _add_common(g)

    b = sub.add_parser("build", help="build a kernel matrix")
    _add_common(b)
    _add_matrix_opts(b)

    s = sub.add_parser("spectrum", help="eigenvalues and grouping")
    _add_common(s)
    _add_matrix_opts(s)
    s.add_argument("--matrix", help="kernel file written by 'build'")
    s.add_argument("--topk", type=int, help="use Lanczos for the top k eigenvalues")

    c = sub.add_parser("certify", help="check the deviation and quotient bounds")
    _add_common(c)
    c.add_argument("--matrix", help="kernel file written by 'build' (default: matrix-free closed form)")
    c.add_argument("--delta", type=float, help="tolerance (default: the observed delta*)")
    c.add_argument("--eta", type=float)
    c.add_argument("--C", type=float)

    r = sub.add_parser("reproduce", help="rerun a figure preset")
    r.add_argument("figure", help=", ".join(FIGURES))
    r.add_argument("--scale", type=float, default=1.0, help="multiplies p and n")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--output-dir", dest="output_dir")
    r.add_argument("--threads", type=int, default=1)
    return parser


def config_from_args(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text()))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _need(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m for m in missing))


def _weights(cfg: RunConfig, args):
    if getattr(args, "weights", None):
        W = load_weights(args.weights)
        cfg.d, cfg.p = W.d, W.p
        return W
    _need(cfg, "d", "p")
    return generate_weights(cfg.d, cfg.p, cfg.seed)


def _dense_matrix(cfg: RunConfig, W):
    src = cfg.matrix_source
    if src not in SOURCES:
        raise DomainError(f"unknown matrix source {src!r}")
    try:
        check_dense_cap(W.p, cfg.dense_cap)
    except DenseCapError as exc:
        raise DenseCapError(f"{exc}; for large p use --source approx or 'spectrum --topk'") from None
    if src == "closed":
        return closed_form_J(column_geometry(W, cfg.dense_cap))
    if src == "series":
        return series_J(column_geometry(W, cfg.dense_cap), SeriesSpec(truncation=cfg.series_N))
    if src == "empirical":
        return empirical_J(W, cfg.n, seed=cfg.seed, sigma2=cfg.sigma2, workers=cfg.workers,
                           threads=cfg.threads, dense_cap=cfg.dense_cap)
    return assemble_approx(build_basis(W), dense_cap=cfg.dense_cap)


def cmd_generate(cfg: RunConfig, args) -> int:
    _need(cfg, "d", "p")
    W = generate_weights(cfg.d, cfg.p, cfg.seed)
    path = save_weights(W, cfg.out() / "weights.bin")
    print(path)
    return EXIT_OK


def cmd_build(cfg: RunConfig, args) -> int:
    W = _weights(cfg, args)
    K = _dense_matrix(cfg, W)
    path = save_kernel(K, cfg.out() / f"kernel_{cfg.matrix_source}.bin")
    print(path)
    return EXIT_OK


def _spectrum_outputs(report, out: Path, stem: str):
    write_text(out / f"{stem}.csv", report.to_csv())
    write_text(out / f"{stem}.json", report.to_json() + "\n")
    return out / f"{stem}.csv"


def cmd_spectrum(cfg: RunConfig, args) -> int:
    if getattr(args, "matrix", None):
        J = load_kernel(args.matrix)
        if J.d is None:
            raise DomainError("kernel file does not record d")
        d, basis = J.d, None
    else:
        W = _weights(cfg, args)
        d, basis = W.d, build_basis(W)
        if cfg.topk is not None and cfg.matrix_source == "closed" and W.p > cfg.dense_cap:
            J = ClosedFormOperator(W)
        else:
            J = _dense_matrix(cfg, W)
    if J.shape[0] == 0:
        raise DomainError("empty matrix")
    meta = {"source": getattr(J, "provenance", cfg.matrix_source), "p": int(J.shape[0]), "seed": cfg.seed}
    if cfg.topk is not None:
        report = analyze_spectrum(J, d, basis=basis, method="lanczos", k=cfg.topk, seed=cfg.seed, metadata=meta)
    else:
        report = analyze_spectrum(J, d, basis=basis, method="dense", metadata=meta)
    print(_spectrum_outputs(report, cfg.out(), "spectrum"))
    return EXIT_OK


def cmd_certify(cfg: RunConfig, args) -> int:
    W = _weights(cfg, args)
    if W.d <= 4:
        raise DomainError(f"d > 4 required (got d={W.d})")
    xi = xi_of_d(W.d, cfg.eta)
    if getattr(args, "matrix", None):
        J = load_kernel(args.matrix)
    else:
        J = ClosedFormOperator(W)
    basis = build_basis(W)
    geom = basis_geometry(basis)
    quotients = rayleigh_quotients(J, basis)
    delta = observed_delta(geom, xi) if cfg.delta is None else cfg.delta
    report = certify_run(J, basis, geom, quotients, xi, delta, cfg.C)
    out = cfg.out()
    write_text(out / "certificate.json", report.to_json() + "\n")
    floors = {c.claim.split(":", 1)[1]: c.rhs for c in report.checks if c.claim.startswith("quotient:")}
    write_text(out / "quotients.csv", quotients_csv(quotients, floors))
    write_text(out / "geometry.csv", geom.to_csv())
    print(out / "certificate.json")
    if not report.passed:
        for c in report.failures():
            print(f"FAIL {c.claim}: {c.lhs!r} {c.relation} {c.rhs!r}", file=sys.stderr)
        return EXIT_CERT
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.figure not in FIGURES:
        raise UsageError(f"unknown figure {args.figure!r}; choose from {', '.join(FIGURES)}")
    if args.scale <= 0:
        raise DomainError("--scale must be > 0")
    preset = FIGURES[args.figure]
    p = max(int(round(preset["p"] * args.scale)), sum(group_sizes(preset["d"])))
    cfg = RunConfig(d=preset["d"], p=p, seed=args.seed, matrix_source=preset["source"],
                    output_dir=args.output_dir, threads=args.threads,
                    dense_cap=max(DEFAULT_DENSE_CAP, p))
    if "n" in preset:
        cfg.n = max(int(round(preset["n"] * args.scale)), 1)
    W = generate_weights(cfg.d, cfg.p, cfg.seed)
    J = _dense_matrix(cfg, W)
    meta = {"figure": args.figure, "scale": args.scale, "source": preset["source"],
            "p": cfg.p, "seed": cfg.seed, "preset_p": preset["p"]}
    if "n" in preset:
        meta.update(n=cfg.n, preset_n=preset["n"])
    report = analyze_spectrum(J, cfg.d, metadata=meta)
    out = cfg.out()
    path = _spectrum_outputs(report, out, f"{args.figure}_spectrum")
    dump_json({"figure": args.figure, "d": cfg.d, **report.reference_lines()}, out / f"{args.figure}_reference_lines.json")
    print(path)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "build": cmd_build, "spectrum": cmd_spectrum, "certify": cmd_certify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = getattr(args, "threads", None) or 1
        with threadpool_limits(limits=threads):
            if args.command == "reproduce":
                return cmd_reproduce(args)
            cfg = config_from_args(args)
            return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, DimensionError, DenseCapError, RunMismatchError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
