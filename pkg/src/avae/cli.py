"""Command-line entry point: ``avae {bandwidth,train,eval-latents,gen}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bandwidth as bw
from .diagnostics import generate, latent_diagnostics
from .kde import WhiteningError
from .nets import MlpParams, encode
from .trainer import TrainConfig, TrainingDivergedError, checkpoint_document, train

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_RUN_KEYS = _CONFIG_FIELDS | {"out"}


class ConfigError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


def _error(msg: str) -> None:
    print(f"avae: error: {msg}", file=sys.stderr)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") \
            from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_list(text: str) -> list[int]:
    vals = _int_list(text)
    if min(vals) < 1:
        raise argparse.ArgumentTypeError(f"values must be >= 1, got {text!r}")
    return vals


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt_h(h: float) -> str:
    return "> 1.0" if h > 1.0 else f"{h:.2f}"


# ---- bandwidth ---------------------------------------------------------------

def cmd_bandwidth(args) -> int:
    if args.table:
        if args.dims is None:
            _error("--table needs --dims")
            return EXIT_USAGE
        ls, ms = args.dims, args.samples
    else:
        if args.dim is None:
            _error("--dim is required (or use --table --dims)")
            return EXIT_USAGE
        ls, ms = [args.dim], args.samples
    rows = bw.bandwidth_table(ls, ms, seeds=args.seeds)
    out_rows = [r.csv_row() for r in rows]
    sys.stdout.write(",".join(bw.TABLE_COLUMNS) + "\n")
    for r in out_rows:
        sys.stdout.write(",".join(r) + "\n")
    for r in rows:
        if r.failed:
            _error(f"l={r.l} m={r.m}: {r.error}")
        else:
            print(f"l={r.l} m={r.m}: h_opt {_fmt_h(r.h_opt)} (std {r.h_opt_std:.4f}), "
                  f"h_corr {r.h_corr:.2f}", file=sys.stderr)
    if args.out:
        _write_csv(Path(args.out), bw.TABLE_COLUMNS, out_rows)
    return EXIT_FAILURE if any(r.failed for r in rows) else EXIT_OK


# ---- train -------------------------------------------------------------------

def load_run_config(path) -> tuple[TrainConfig, str | None]:
    """Strictly parse a run config; returns the training config and its ``out`` entry."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(doc.keys() - _RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    out = doc.pop("out", None)
    try:
        cfg = TrainConfig(**doc)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg, out


def cmd_train(args) -> int:
    try:
        cfg, cfg_out = load_run_config(args.config)
    except ConfigError as exc:
        _error(str(exc))
        return EXIT_USAGE
    out = args.out or cfg_out
    if not out:
        _error("no output directory (pass --out or set \"out\" in the config)")
        return EXIT_USAGE
    out = Path(out).resolve()
    try:
        from .datasets import make_dataset
        dataset = make_dataset(cfg.dataset)
        cfg.validate(dataset.n - max(1, int(round(cfg.val_fraction * dataset.n))))
    except (ValueError, OSError) as exc:
        _error(f"invalid config: {exc}")
        return EXIT_USAGE
    try:
        result = train(cfg, dataset)
    except TrainingDivergedError as exc:
        _error(f"training diverged: {exc}")
        return EXIT_FAILURE
    except bw.ConvergenceError as exc:
        _error(str(exc))
        return EXIT_FAILURE

    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoint.json").write_text(json.dumps(checkpoint_document(result), indent=1) + "\n")
    with open(out / "metrics.jsonl", "w") as fh:
        for lg in result.logs:
            fh.write(json.dumps(lg.metrics()) + "\n")
    # wall-clock times live apart from metrics so metrics stay reproducible
    with open(out / "timing.jsonl", "w") as fh:
        for lg in result.logs:
            fh.write(json.dumps({"epoch": lg.epoch, "wall_time": lg.wall_time}) + "\n")
    z = encode(result.encoder, dataset.data[result.val_idx])
    _write_csv(out / "latents.csv", [f"z{i}" for i in range(z.shape[1])],
               ([repr(float(v)) for v in row] for row in z))
    final = result.logs[-1]
    print(f"trained {cfg.epochs} epochs: val recon {final.val_recon:.4g}, beta {final.beta:.4g}, "
          f"h_corr {result.h_corr:.4f}; outputs in {out}")
    return EXIT_OK


# ---- eval-latents ------------------------------------------------------------

def read_latent_csv(path) -> np.ndarray:
    """Parse a latent CSV with a ``z0,z1,...`` header; errors carry the line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("line 1: empty file") from None
        header = [h.strip() for h in header]
        if not header or header != [f"z{i}" for i in range(len(header))]:
            raise CsvFormatError(f"line 1: expected header z0,z1,..., got {','.join(header)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"line {line}: {len(row)} fields, header has {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CsvFormatError(f"line {line}: non-numeric value in {row}") from None
            if not all(np.isfinite(rows[-1])):
                raise CsvFormatError(f"line {line}: non-finite value")
    if not rows:
        raise CsvFormatError("no data rows")
    return np.asarray(rows)


def cmd_eval_latents(args) -> int:
    try:
        z = read_latent_csv(args.latents)
    except FileNotFoundError:
        _error(f"latents file not found: {args.latents}")
        return EXIT_USAGE
    except CsvFormatError as exc:
        _error(f"{args.latents}: {exc}")
        return EXIT_USAGE
    if not 0 <= args.h_corr < 1:
        _error(f"--h-corr must lie in [0, 1), got {args.h_corr}")
        return EXIT_USAGE
    try:
        report = latent_diagnostics(z, args.h_corr)
    except (ValueError, WhiteningError) as exc:
        _error(str(exc))
        return EXIT_USAGE
    doc = json.dumps(report.to_json(), indent=1) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(doc)
    print(f"entropy {report.entropy:.4f}  collapsed axes {len(report.collapsed_axes)}")
    return EXIT_OK


# ---- gen ---------------------------------------------------------------------

def load_checkpoint(path) -> tuple[MlpParams, MlpParams, float]:
    doc = json.loads(Path(path).read_text())
    enc = MlpParams.from_json(doc["encoder"])
    dec = MlpParams.from_json(doc["decoder"])
    h_corr = float(doc["h_corr"])
    if not 0 <= h_corr < 1:
        raise ValueError(f"checkpoint h_corr {h_corr} outside [0, 1)")
    return enc, dec, h_corr


def cmd_gen(args) -> int:
    try:
        _, dec, h_corr = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        _error(f"checkpoint not found: {args.checkpoint}")
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, TypeError, IndexError) as exc:
        _error(f"corrupt checkpoint {args.checkpoint}: {exc!r}")
        return EXIT_USAGE
    x = generate(dec, h_corr, args.n, args.seed)
    _write_csv(Path(args.out), [f"x{i}" for i in range(dec.d_out)],
               ([repr(float(v)) for v in row] for row in x))
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avae", description="KDE aggregate-posterior autoencoders")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bandwidth", help="optimal and corrected KDE bandwidths")
    b.add_argument("--dim", type=_positive_int, help="latent dimension l")
    b.add_argument("--samples", type=_positive_list, required=True,
                   help="KDE sample count(s) m, comma-separated")
    b.add_argument("--seeds", type=_int_list, default=list(bw.DEFAULT_SEEDS),
                   help="seeds to average over (default 0,1,2,3,4)")
    b.add_argument("--table", action="store_true", help="run every (dim, samples) pair")
    b.add_argument("--dims", type=_positive_list, help="latent dimensions for --table")
    b.add_argument("--out", help="also write the CSV here")
    b.set_defaults(func=cmd_bandwidth)

    t = sub.add_parser("train", help="train an autoencoder from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-latents", help="diagnostics for a latent CSV")
    e.add_argument("--latents", required=True)
    e.add_argument("--h-corr", type=float, required=True)
    e.add_argument("--out", help="write the report JSON here")
    e.set_defaults(func=cmd_eval_latents)

    g = sub.add_parser("gen", help="sample from a trained decoder")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--n", type=_nonneg_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
