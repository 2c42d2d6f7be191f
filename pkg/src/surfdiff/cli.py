"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numeric failure. Errors print a single line to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericError, SurfDiffError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("surfdiff")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# Built-in defaults per subcommand. TOML values override these, flags
# override both. Keys are argparse destinations.
DEFAULTS: dict[str, dict] = {
    "icosphere": {"level": None, "stats": False, "export": None},
    "gen-data": {"n": 200, "level": 3, "out": None, "age_min": 24.0, "age_max": 45.0},
    "train": {},  # filled from TrainConfig
    "sample": {
        "checkpoint": None,
        "age": None,
        "count": 20,
        "guidance": 2.0,
        "out": None,
        "weights": "ema",
        "batch_size": 64,
        "clip": 5.0,
    },
    "eval": {
        "checkpoint": None,
        "probe_manifest": None,
        "ages": "27:44",
        "per_age": 20,
        "report": None,
        "guidance": 2.0,
        "weights": "ema",
        "lam": 1.0,
        "features": "spread",
        "batch_size": 64,
    },
    "viz": {"input": None, "out": None, "width": 256, "height": 128},
}
REQUIRED = {
    "icosphere": ("level",),
    "gen-data": ("out",),
    "train": ("manifest", "out_dir"),
    "sample": ("checkpoint", "out"),
    "eval": ("checkpoint", "probe_manifest", "report"),
    "viz": ("input", "out"),
}
GLOBAL_DEFAULTS = {"seed": 0, "threads": None, "verbose": False}


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    from .training import TrainConfig

    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="TOML file with option values; flags take precedence")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS thread count (default: all cores)")
    g.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress details")
    g.add_argument("--force", action="store_true", help="allow writing into a non-empty output location")

    parser = _Parser(prog="surfdiff", description="Conditional diffusion over scalar maps on icospheres.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("icosphere", parents=[common], help="build an icosphere and print statistics")
    p.add_argument("--level", type=int)
    p.add_argument("--stats", action="store_true", default=None, help="print vertex/face/edge counts")
    p.add_argument("--export", help="write the mesh as an OBJ file")

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic age-conditioned dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--level", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--age-min", type=float)
    p.add_argument("--age-max", type=float)

    p = sub.add_parser("train", parents=[common], help="train a denoiser")
    for f in TrainConfig.__dataclass_fields__.values():
        if f.name == "seed":
            continue
        kind = {"int": int, "float": float}.get(str(f.type), str)
        alias = ["--out"] if f.name == "out_dir" else []
        p.add_argument(_flag(f.name), *alias, dest=f.name, type=kind)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("sample", parents=[common], help="generate maps from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--age", type=float, help="age in weeks; omit for unconditional samples")
    p.add_argument("--count", type=int)
    p.add_argument("--guidance", type=float, help="guidance scale w (default 2.0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--weights", choices=("ema", "raw"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--clip", type=float)

    p = sub.add_parser("eval", parents=[common], help="score conditional samples with an age probe")
    p.add_argument("--checkpoint")
    p.add_argument("--probe-manifest", help="manifest of real maps; train split fits the probe")
    p.add_argument("--ages", help="integer age range lo:hi, inclusive")
    p.add_argument("--per-age", type=int)
    p.add_argument("--report", help="output JSON path")
    p.add_argument("--guidance", type=float)
    p.add_argument("--weights", choices=("ema", "raw"))
    p.add_argument("--lam", type=float, help="ridge penalty")
    p.add_argument("--features", choices=("mean", "spread"))
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("viz", parents=[common], help="render an SMF file to an equirectangular PNG")
    p.add_argument("--input")
    p.add_argument("--out", help="output PNG path")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the TOML file and explicit flags."""
    cmd = args.command
    if cmd == "train":
        from .training import TrainConfig

        defaults = TrainConfig().to_dict()
        defaults.pop("seed")
        defaults["resume"] = None
    else:
        defaults = dict(DEFAULTS[cmd])
    resolved = {**GLOBAL_DEFAULTS, **defaults}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise SurfDiffError(f"config {args.config}: {exc}") from exc
        unknown = set(doc) - set(resolved)
        if unknown:
            raise SurfDiffError(f"config {args.config}: unknown keys {sorted(unknown)}")
        resolved.update(doc)
    for key in resolved:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    for key in REQUIRED[cmd]:
        if resolved.get(key) in (None, ""):
            raise UsageError(f"missing required flag {_flag(key)}")
    if resolved["threads"] is None:
        resolved["threads"] = os.cpu_count() or 1
    return resolved


def _write_resolved(path: Path, resolved: dict, command: str) -> None:
    import tomli_w

    doc = {k: v for k, v in resolved.items() if v is not None and k != "force"}
    path.write_text(f"# surfdiff {command}\n" + tomli_w.dumps(doc))


def _check_fresh(path: Path, force: bool) -> None:
    if path.exists() and (not path.is_dir() or any(path.iterdir())) and not force:
        raise SurfDiffError(f"{path} already exists and is not empty; pass --force to overwrite")


@contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise SurfDiffError(f"{out} is in use by another run (remove {lock} if stale)") from exc
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


class _Progress:
    """Prints a line to stderr each time another tenth of the work is done."""

    def __init__(self, label: str, total: int):
        self.label = label
        self.total = max(int(total), 1)
        self.next = 1

    def __call__(self, done: int, extra: str = "") -> None:
        while self.next <= 10 and done * 10 >= self.next * self.total:
            print(f"{self.label}: {self.next * 10}% ({done}/{self.total}){extra}", file=sys.stderr)
            self.next += 1


# subcommands ---------------------------------------------------------


def cmd_icosphere(r: dict) -> int:
    from .icosphere import build_icosphere, export_obj

    mesh = build_icosphere(r["level"])
    if r["stats"] or not r["export"]:
        print(
            f"vertices={mesh.vertices.shape[0]} faces={mesh.faces.shape[0]} "
            f"edges={mesh.edges.shape[0]} euler={mesh.euler}"
        )
    if r["export"]:
        export_obj(mesh, r["export"])
    return EXIT_OK


def cmd_gen_data(r: dict) -> int:
    from .dataio import synth_dataset

    out = Path(r["out"])
    _check_fresh(out, r["force"])
    with _locked(out):
        man = synth_dataset(r["n"], r["level"], r["seed"], out, r["age_min"], r["age_max"])
        _write_resolved(out / "resolved.toml", r, "gen-data")
    log.info("wrote %d maps to %s", len(man.entries), out)
    return EXIT_OK


def cmd_train(r: dict) -> int:
    from .training import TrainConfig, train

    fields = set(TrainConfig.__dataclass_fields__)
    cfg = TrainConfig.from_dict({k: v for k, v in r.items() if k in fields})
    out = Path(cfg.out_dir)
    if r["resume"] is None:
        _check_fresh(out, r["force"])
    bar = _Progress("train", cfg.steps)

    def progress(rec):
        bar(rec["step"], f" mse={rec['loss_mse']:.4g} vlb={rec['loss_vlb']:.4g}")

    with _locked(out):
        _write_resolved(out / "resolved.toml", r, "train")
        state, _ = train(cfg, resume=r["resume"], progress=progress)
    log.info("finished at step %d; checkpoint %s", state.step, out / "final.bin")
    return EXIT_OK


def _load_sampling(r: dict):
    from .patching import load_or_build_patch_table
    from .training import load_checkpoint

    ck = load_checkpoint(r["checkpoint"])
    model = ck.denoiser(r["weights"])
    table = load_or_build_patch_table(ck.high_level, ck.low_level, None)
    return ck, model, table


def cmd_sample(r: dict) -> int:
    from .dataio import Entry, Manifest, write_smf
    from .sampler import SampleRequest, sample

    out = Path(r["out"])
    _check_fresh(out, r["force"])
    ck, model, table = _load_sampling(r)
    req = SampleRequest(r["count"], r["age"], r["guidance"], r["seed"], r["clip"])
    n_batches = -(-req.count // r["batch_size"])
    bar = _Progress("sample", ck.schedule.T * n_batches)
    done = [0]

    def progress(i, T):
        done[0] += 1
        bar(done[0])

    with _locked(out):
        _write_resolved(out / "resolved.toml", r, "sample")
        maps = sample(model, req, ck.schedule, table, ck.normalization, r["batch_size"], progress)
        entries = []
        for i, m in enumerate(maps):
            name = f"sample_{i:05d}.smf"
            write_smf(m, out / name)
            entries.append(Entry(name, m.age_weeks, "test"))
        Manifest(ck.high_level, entries, None, out).save(out / "manifest.json")
    log.info("wrote %d samples to %s", len(maps), out)
    return EXIT_OK


def _parse_ages(spec: str) -> np.ndarray:
    try:
        lo, hi = (int(x) for x in str(spec).split(":"))
    except ValueError as exc:
        raise UsageError(f"--ages expects lo:hi with integers, got {spec!r}") from exc
    if hi < lo:
        raise UsageError(f"--ages range {spec!r} is empty")
    return np.arange(lo, hi + 1, dtype=np.float64)


def run_eval(r: dict, progress=None) -> dict:
    """Fit the probe on real training maps, then score held-out real and generated maps."""
    from .dataio import load_manifest
    from .evalprobe import evaluate, features, fit_ridge
    from .errors import ArgumentError
    from .sampler import generate

    ck, model, table = _load_sampling(r)
    man = load_manifest(r["probe_manifest"])
    if man.level != ck.high_level:
        raise ArgumentError(f"probe manifest is level {man.level}, checkpoint is level {ck.high_level}")
    kind = r["features"]

    def design(maps):
        X = np.stack([features(m, table, kind) for m in maps])
        y = np.array([m.age_weeks for m in maps], dtype=np.float64)
        return X, y

    X, y = design(man.load_maps("train"))
    probe = fit_ridge(X, y, r["lam"], kind)
    held = man.load_maps("test") + man.load_maps("val")
    real = evaluate(probe, *design(held))

    ages = np.repeat(_parse_ages(r["ages"]), r["per_age"])
    gen = generate(
        model,
        ages,
        ck.schedule,
        table,
        ck.normalization,
        guidance=r["guidance"],
        seed=r["seed"],
        batch_size=r["batch_size"],
        progress=progress,
    )
    synth = evaluate(probe, np.stack([features(m, table, kind) for m in gen]), ages)
    return {
        "mae_real": real["mae"],
        "mae_real_sd": real["mae_sd"],
        "r2_real": real["r2"],
        "mae_synth": synth["mae"],
        "mae_synth_sd": synth["mae_sd"],
        "r2_synth": synth["r2"],
        "ratio": synth["mae"] / real["mae"] if real["mae"] > 0 else float("inf"),
        "n_real": int(len(held)),
        "n_synth": int(ages.size),
        "features": kind,
        "lam": float(r["lam"]),
    }


def cmd_eval(r: dict) -> int:
    report = Path(r["report"])
    if report.exists() and not r["force"]:
        raise SurfDiffError(f"{report} already exists; pass --force to overwrite")
    n_ages = _parse_ages(r["ages"]).size
    bar = _Progress("eval", 1)
    done = [0]

    def progress(i, T):
        done[0] += 1
        bar.total = T * -(-n_ages * r["per_age"] // r["batch_size"])
        bar(done[0])

    result = run_eval(r, progress)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _write_resolved(report.with_name(report.stem + ".resolved.toml"), r, "eval")
    print(
        f"mae_real={result['mae_real']:.4f} mae_synth={result['mae_synth']:.4f} "
        f"ratio={result['ratio']:.4f} r2_real={result['r2_real']:.4f} r2_synth={result['r2_synth']:.4f}"
    )
    return EXIT_OK


def cmd_viz(r: dict) -> int:
    from .dataio import project_png, read_smf

    out = Path(r["out"])
    if out.exists() and not r["force"]:
        raise SurfDiffError(f"{out} already exists; pass --force to overwrite")
    project_png(read_smf(r["input"]), r["width"], r["height"], out)
    return EXIT_OK


COMMANDS = {
    "icosphere": cmd_icosphere,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "viz": cmd_viz,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        r = resolve(args)
        r["force"] = bool(getattr(args, "force", False))
    except UsageError as exc:
        print(f"surfdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SurfDiffError as exc:
        print(f"surfdiff: error: {exc}", file=sys.stderr)
        return EXIT_DATA

    logging.basicConfig(level=logging.INFO if r["verbose"] else logging.WARNING, format="%(levelname)s %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=int(r["threads"])):
            return COMMANDS[args.command](r)
    except UsageError as exc:
        print(f"surfdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        where = f" in {exc.op}" if exc.op else ""
        print(f"surfdiff: numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SurfDiffError, OSError, KeyError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.strerror else str(exc)
        print(f"surfdiff: error: {msg}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
