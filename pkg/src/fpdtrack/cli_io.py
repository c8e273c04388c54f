"""File formats, configuration and the ``fpdtrack`` command line.

Every CSV written here starts with ``#``-prefixed metadata lines
(``# key: value``) holding the package version, a SHA-256 hash of the
effective configuration, the seed and the sampling rate where relevant.
Floats are written with 17 significant digits so that reading a file back
reproduces the in-memory values exactly.

Subcommands::

    fpdtrack simulate --config c.json --out sig.csv
    fpdtrack eks --in sig.csv --t-bl 4.5 --out track.csv
    fpdtrack scf --in sig.csv --block-length 60 --block-length 200 --out scf.csv
    fpdtrack bench --config grid.json --out report.json
    fpdtrack crlb --config c.json

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
data or numerical errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bench import GridConfig, crlb_freq, run_grid
from .em import EmConfig, fit_em
from .errors import FormatError, FpdError, InvalidArgumentError
from .kalman import HyperParams, run_eks
from .scf import fit_blocks
from .signal_model import FrequencyTrack, SimParams, TimeSeries, simulate_fpd

log = logging.getLogger(__name__)

# 3He, Hz/T
GAMMA_HE3_OVER_2PI = 32.434e6
UNIFORM_TOL = 1e-6

TRACK_COLUMNS = ("block_index", "t_center", "f", "f_std", "A", "A_std", "phi", "loglik_cum")
SCF_COLUMNS = ("block_index", "t_center", "f", "u_f", "a_s", "u_as", "a_c", "u_ac",
               "c0", "u_c0", "residual_mse", "n_samples")


class UsageError(FpdError):
    """Bad command line or configuration (exit status 1)."""


def field_from_freq(f, gamma_over_2pi=GAMMA_HE3_OVER_2PI):
    """Magnetic field (T) whose Larmor frequency is ``f`` (Hz)."""
    if not gamma_over_2pi > 0:
        raise InvalidArgumentError(f"gamma_over_2pi must be > 0, got {gamma_over_2pi}")
    return np.asarray(f, dtype=float) / gamma_over_2pi if np.ndim(f) else f / gamma_over_2pi


def freq_from_field(b, gamma_over_2pi=GAMMA_HE3_OVER_2PI):
    """Larmor frequency (Hz) in a field ``b`` (T)."""
    if not gamma_over_2pi > 0:
        raise InvalidArgumentError(f"gamma_over_2pi must be > 0, got {gamma_over_2pi}")
    return b * gamma_over_2pi


# --- serialization helpers -------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def config_hash(cfg) -> str:
    """SHA-256 of the canonical JSON form of ``cfg``."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def file_hash(path) -> str:
    """SHA-256 of a file's bytes; identifies an input independently of its location."""
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


def make_meta(cfg: dict, seed=None, **extra) -> dict:
    meta = {"fpdtrack_version": __version__, "config_sha256": config_hash(cfg)}
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    return meta


def _write_csv(path, columns, rows, meta: Optional[dict]):
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}: {v if isinstance(v, str) else _fmt(v)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv_table(path) -> tuple[dict, list, np.ndarray]:
    """Read a CSV written by this module: ``(meta, columns, data)``."""
    path = Path(path)
    meta, header, rows, lines = {}, None, [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, sep, val = s[1:].partition(":")
                if sep:
                    meta[key.strip()] = val.strip()
                continue
            cells = [c.strip() for c in s.split(",")]
            if header is None:
                header = cells
                continue
            if len(cells) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(cells)}", line=lineno)
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise FormatError(f"non-numeric field in {s!r}", line=lineno) from None
            lines.append(lineno)
    if header is None:
        raise FormatError(f"{path}: no header row")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    for j in range(data.shape[1]):
        bad = ~np.isfinite(data[:, j])
        if bad.any():
            raise FormatError(f"non-finite value in column {header[j]!r}",
                              line=lines[int(np.argmax(bad))])
    return meta, header, data


# --- time series -----------------------------------------------------------

def read_timeseries(path, format: str = "auto", f_s: Optional[float] = None) -> TimeSeries:
    """Read a real time series from CSV.

    Parameters
    ----------
    path : path-like
        File with header ``t,y`` or ``y``. Lines starting with ``#`` are
        metadata; an ``f_s`` entry there fixes the sampling rate exactly.
    format : {"auto", "ty", "y"}
        Expected header; ``"auto"`` accepts either.
    f_s : float, optional
        Sampling rate for ``y``-only files (Hz).

    Raises
    ------
    FormatError
        Malformed rows (with line number), wrong header, or a time column
        that is not uniform to 1 ppm of the sampling interval.
    """
    meta, header, data = read_csv_table(path)
    if format not in ("auto", "ty", "y"):
        raise InvalidArgumentError(f"unknown format {format!r}")
    if header == ["t", "y"] and format in ("auto", "ty"):
        if data.shape[0] < 2:
            raise FormatError("a t,y series needs at least two rows")
        t, y = data[:, 0], data[:, 1]
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise FormatError("time column is not strictly increasing",
                              line=None)
        step = (t[-1] - t[0]) / (t.size - 1)
        if np.max(np.abs(dt - step)) > UNIFORM_TOL * step:
            raise FormatError("time column is not uniformly sampled")
        rate = float(meta["f_s"]) if "f_s" in meta else 1.0 / step
        if abs(rate * step - 1.0) > UNIFORM_TOL:
            raise FormatError(f"metadata f_s={rate} disagrees with the time column")
        return TimeSeries(y, rate, t0=float(t[0]))
    if header == ["y"] and format in ("auto", "y"):
        rate = f_s if f_s is not None else (float(meta["f_s"]) if "f_s" in meta else None)
        if rate is None:
            raise FormatError("a y-only series needs f_s from the configuration")
        t0 = float(meta.get("t0", 0.0))
        return TimeSeries(data[:, 0], rate, t0=t0)
    raise FormatError(f"unexpected header {','.join(header)!r} for format {format!r}", line=None)


def write_timeseries(ts: TimeSeries, path, meta: Optional[dict] = None):
    meta = dict(meta or {})
    meta["f_s"] = ts.f_s
    _write_csv(path, ("t", "y"), zip(ts.times, ts.samples), meta)


def write_truth(truth: FrequencyTrack, path, t0=0.0, meta: Optional[dict] = None):
    t = t0 + np.arange(len(truth)) / truth.f_s
    meta = dict(meta or {})
    meta["f_s"] = truth.f_s
    _write_csv(path, ("t", "f"), zip(t, truth.freqs), meta)


def read_truth(path) -> FrequencyTrack:
    meta, header, data = read_csv_table(path)
    if header != ["t", "f"]:
        raise FormatError(f"expected header t,f, got {','.join(header)}")
    return FrequencyTrack(data[:, 1], float(meta["f_s"]))


# --- estimator outputs -----------------------------------------------------

def track_rows(track) -> list:
    """Rows of the track table; ``loglik_cum`` is the running log-likelihood."""
    ll = np.cumsum(track.loglik_inc)
    return [(k, tc, f, fs, a, sa, ph, l) for k, tc, f, fs, a, sa, ph, l in
            zip(range(track.n_blocks), track.t_center, track.freq, track.freq_std,
                track.amplitude, track.amplitude_std, track.phase, ll)]


def write_track(track, path, meta: Optional[dict] = None, gamma_over_2pi=None):
    """Write a smoothed track; a field column ``B`` (T) is added when a gyromagnetic constant is given."""
    rows = track_rows(track) if track is not None else []
    cols = TRACK_COLUMNS
    if gamma_over_2pi is not None:
        cols = cols + ("B",)
        rows = [r + (field_from_freq(r[2], gamma_over_2pi),) for r in rows]
    _write_csv(path, cols, rows, meta)


def scf_rows(fits) -> list:
    return [(f.block_index, f.t_center, f.f, f.u_f, f.a_s, f.u_as, f.a_c, f.u_ac,
             f.c0, f.u_c0, f.residual_mse, f.n_samples) for f in fits]


def write_scf(fits, path, meta: Optional[dict] = None):
    _write_csv(path, SCF_COLUMNS, scf_rows(fits or []), meta)


def read_table(path) -> tuple[dict, dict]:
    """Read a track or SCF table as ``(meta, {column: array})``."""
    meta, header, data = read_csv_table(path)
    return meta, {c: data[:, j] for j, c in enumerate(header)}


def write_bench(report: dict, path, meta: Optional[dict] = None):
    """Write a bench report as one JSON document.

    Python's float repr is the shortest string that round-trips, so the
    re-parsed report equals the in-memory one exactly.
    """
    doc = {"meta": dict(meta or {}), **report}
    try:
        Path(path).write_text(json.dumps(doc, indent=1, default=_json_default, allow_nan=False))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_bench(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None


# --- configuration ---------------------------------------------------------

CONFIG_KEYS = {"sim", "t_bl", "l_half", "search", "block_lengths", "em", "hp", "f_s",
               "gamma_over_2pi", "grid", "crlb", "seed", "truth"}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _build(cls, d, what):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise UsageError(f"{what} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise UsageError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, InvalidArgumentError) as exc:
        raise UsageError(f"invalid {what}: {exc}") from None


def sim_params(d) -> SimParams:
    return _build(SimParams, d, "sim")


def em_config(d) -> EmConfig:
    d = dict(d or {})
    if d.get("theta_init") is not None:
        d["theta_init"] = HyperParams.from_dict(d["theta_init"])
    return _build(EmConfig, d, "em")


def grid_config(d) -> GridConfig:
    d = dict(d or {})
    if "base" in d:
        d["base"] = sim_params(d["base"])
    if "em" in d:
        d["em"] = em_config(d["em"])
    if "search" in d:
        d["search"] = tuple(d["search"])
    return _build(GridConfig, d, "grid")


# --- command line ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fpdtrack", description="Frequency tracking of FPD signals.")
    p.add_argument("--version", action="version", version=f"fpdtrack {__version__}")
    sub = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)

    def common(sp, need_in=False, need_out=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int)
        if need_in:
            sp.add_argument("--in", dest="inp", required=True, help="input time series CSV")
            sp.add_argument("--f-s", dest="f_s", type=float, help="sampling rate for y-only input")
        sp.add_argument("--out", required=need_out)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="simulate an FPD record")
    common(sp)
    sp.add_argument("--truth", help="also write the true frequency track")

    sp = sub.add_parser("eks", help="EM-tuned extended Kalman smoother")
    common(sp, need_in=True)
    sp.add_argument("--t-bl", dest="t_bl", type=float)
    sp.add_argument("--l", dest="l_half", type=int)
    sp.add_argument("--gamma", dest="gamma_over_2pi", type=float,
                    help="gyromagnetic ratio / 2 pi in Hz/T; adds a field column")

    sp = sub.add_parser("scf", help="block-wise sine-cosine fit")
    common(sp, need_in=True)
    sp.add_argument("--block-length", dest="block_lengths", type=float, action="append")

    sp = sub.add_parser("bench", help="Monte-Carlo comparison grid")
    common(sp)
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("crlb", help="single-tone frequency CRLB")
    common(sp, need_out=False)
    sp.add_argument("--amplitude", type=float)
    sp.add_argument("--sigma-eta", dest="sigma_eta", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--f-s", dest="f_s", type=float)
    return p


def _search(cfg):
    s = cfg.get("search", [50.0, 150.0])
    if len(s) != 2:
        raise UsageError("search must be [lo, hi] in Hz")
    return float(s[0]), float(s[1])


def _suffixed(path, length, many):
    if not many:
        return Path(path)
    p = Path(path)
    return p.with_name(f"{p.stem}_{_fmt(length)}s{p.suffix}")


def _cmd_simulate(args, cfg):
    sim = dict(cfg.get("sim") or {})
    if args.seed is not None:
        sim["seed"] = args.seed
    p = sim_params(sim)
    eff = {"mode": "simulate", "sim": asdict(p)}
    ts, truth = simulate_fpd(p)
    meta = make_meta(eff, seed=p.seed)
    write_timeseries(ts, args.out, meta)
    if args.truth:
        write_truth(truth, args.truth, meta=meta)


def _cmd_eks(args, cfg):
    t_bl = args.t_bl if args.t_bl is not None else cfg.get("t_bl", 4.5)
    l_half = args.l_half if args.l_half is not None else cfg.get("l_half", 1)
    gamma = args.gamma_over_2pi if args.gamma_over_2pi is not None else cfg.get("gamma_over_2pi")
    search = _search(cfg)
    ts = read_timeseries(args.inp, f_s=args.f_s if args.f_s is not None else cfg.get("f_s"))
    eff = {"mode": "eks", "input_sha256": file_hash(args.inp), "t_bl": t_bl, "l_half": l_half,
           "search": list(search), "hp": cfg.get("hp"), "em": cfg.get("em")}
    if cfg.get("hp") is not None:
        track = run_eks(ts, t_bl, l_half, HyperParams.from_dict(cfg["hp"]), search=search)
        extra = {}
    else:
        report, track = fit_em(ts, t_bl, l_half, em_config(cfg.get("em")), search=search)
        extra = {"em_iterations": report.iterations_used, "em_converged": str(report.converged)}
    meta = make_meta(eff, seed=cfg.get("seed"), f0=track.win.f0, **extra)
    for k, v in track.hp.to_dict().items():
        if v is not None and k != "p0":
            meta[f"hp_{k}"] = v
    write_track(track, args.out, meta, gamma_over_2pi=gamma)


def _cmd_scf(args, cfg):
    lengths = args.block_lengths or cfg.get("block_lengths") or [200.0]
    search = _search(cfg)
    ts = read_timeseries(args.inp, f_s=args.f_s if args.f_s is not None else cfg.get("f_s"))
    many = len(lengths) > 1
    digest = file_hash(args.inp)
    for length in lengths:
        fits = fit_blocks(ts, float(length), search)
        eff = {"mode": "scf", "input_sha256": digest, "block_length": float(length),
               "search": list(search)}
        write_scf(fits, _suffixed(args.out, length, many), make_meta(eff, seed=cfg.get("seed")))


def _cmd_bench(args, cfg):
    g = dict(cfg.get("grid") or {})
    if args.seed is not None:
        g["seed_base"] = args.seed
    if args.workers is not None:
        g["workers"] = args.workers
    gc = grid_config(g)
    report = run_grid(gc)
    write_bench(report, args.out, make_meta(report["config"], seed=gc.seed_base))


def _cmd_crlb(args, cfg):
    c = dict(cfg.get("crlb") or {})
    for k in ("amplitude", "sigma_eta", "n", "f_s"):
        if getattr(args, k) is not None:
            c[k] = getattr(args, k)
    missing = {"amplitude", "sigma_eta", "n", "f_s"} - set(c)
    if missing:
        raise UsageError(f"crlb needs {sorted(missing)}")
    var = crlb_freq(float(c["amplitude"]), float(c["sigma_eta"]), int(c["n"]), float(c["f_s"]))
    out = {"crlb_var_hz2": var, "crlb_std_hz": float(np.sqrt(var)), **c}
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


COMMANDS = {"simulate": _cmd_simulate, "eks": _cmd_eks, "scf": _cmd_scf,
            "bench": _cmd_bench, "crlb": _cmd_crlb}


def cli_main(argv=None) -> int:
    """Run the command line; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"fpdtrack: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.mode](args, cfg)
    except UsageError as exc:
        print(f"fpdtrack: error: {exc}", file=sys.stderr)
        return 1
    except (FpdError, ArithmeticError, ValueError, OSError, KeyError) as exc:
        print(f"fpdtrack: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(cli_main())
