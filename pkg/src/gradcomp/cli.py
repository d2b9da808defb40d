"""Config-driven experiment runner.

Subcommands: sweep, var-compare, cgd, dcgd, rip-estimate, frame-gen.
Settings come from an INI config file (one section per experiment kind,
see README for the schema); command-line flags and --override KEY=VALUE
pairs win over file values.  Every run writes its data files plus a JSON
manifest with the echoed config, the master seed, wall time, and a sha256
per output, so identical configs byte-reproduce identical outputs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .core import ParameterError, RngStream
from .compressors import CompressorSpec, scale_to_contractive
from .analysis import variance_bits_sweep, empirical_normalized_variance
from .compressors import build_operator
from .kashin import (
    estimate_rip,
    generate_frame,
    save_frame,
    theoretical_rip_params,
)
from .optim import (
    DivergenceError,
    cgd_run,
    dcgd_run,
    generate_distributed_quadratic,
    generate_quadratic,
)

OUTDIR_ENV = "GRADCOMP_OUT"

SWEEP_COLUMNS = ["scheme", "d", "vector_seed", "alpha_hat", "stderr", "bits",
                 "bits_per_coord", "up_margin"]
TRAJECTORY_COLUMNS = ["scheme", "iter", "subopt", "cum_bits"]
VARCOMPARE_COLUMNS = ["scheme", "d", "param", "trial", "omega_hat"]


def parse_scheme(token: str) -> CompressorSpec:
    """Parse tokens like 'randk:k=100', 'kashin:lam=2:inner=ternary' or
    'scaled-ternary'."""
    scaled = token.startswith("scaled-")
    if scaled:
        token = token[len("scaled-"):]
    parts = token.split(":")
    kind = parts[0]
    kwargs = {}
    for part in parts[1:]:
        if "=" not in part:
            raise ParameterError(f"malformed scheme parameter {part!r} in {token!r}")
        key, value = part.split("=", 1)
        if key in ("k", "s", "m"):
            kwargs[key] = int(value)
        elif key == "lam":
            kwargs[key] = float(value)
        elif key == "inner":
            kwargs[key] = value
        else:
            raise ParameterError(f"unknown scheme parameter {key!r}")
    spec = CompressorSpec(kind=kind, **kwargs)
    if scaled:
        spec = scale_to_contractive(spec)
    return spec


def scheme_param_string(spec: CompressorSpec) -> str:
    parts = []
    if spec.k is not None:
        parts.append(f"k={spec.k}")
    if spec.s is not None:
        parts.append(f"s={spec.s}")
    if spec.lam is not None:
        parts.append(f"lam={spec.lam:g}")
    if spec.inner is not None:
        parts.append(f"inner={spec.inner}")
    if spec.m is not None:
        parts.append(f"m={spec.m}")
    return ";".join(parts) or "-"


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunConfig:
    """Flat section/key settings with typed accessors."""

    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def load(cls, kind: str, config_path, overrides) -> "RunConfig":
        values = dict(DEFAULTS.get(kind, {}))
        if config_path:
            parser = configparser.ConfigParser()
            read = parser.read(config_path)
            if not read:
                raise ParameterError(f"cannot read config file {config_path}")
            for section in ("run", kind):
                if parser.has_section(section):
                    values.update(parser.items(section))
        for item in overrides or []:
            if "=" not in item:
                raise ParameterError(f"--override expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            values[key.strip()] = value.strip()
        return cls(values)

    def get_int(self, key):
        return int(self.values[key])

    def get_float(self, key):
        return float(self.values[key])

    def get_opt_float(self, key):
        raw = self.values.get(key, "")
        return float(raw) if raw not in ("", None, "none") else None

    def get_str(self, key):
        return str(self.values[key])

    def get_ints(self, key):
        return [int(v) for v in str(self.values[key]).split()]

    def get_schemes(self, key):
        return [parse_scheme(tok) for tok in str(self.values[key]).split()]


DEFAULTS = {
    "sweep": {
        "d": "1000",
        "schemes": ("randk:k=100 topk:k=100 std_dither:s=2 nat_dither:s=4 "
                    "ternary scaled_sign kashin:lam=2:inner=ternary"),
        "n_vectors": "100",
        "trials": "1000",
    },
    "var-compare": {
        "dims": "100 1000",
        "schemes": "nat_dither:s=4 kashin:lam=2:inner=nat_dither:s=4",
        "n_vectors": "300",
    },
    "cgd": {
        "d": "200", "kappa": "100", "scheme": "ternary", "gamma": "",
        "max_iter": "20000",
    },
    "dcgd": {
        "n": "10", "d": "1000", "kappa": "100", "scheme": "ternary",
        "gamma": "", "max_iter": "20000",
    },
    "rip-estimate": {"d": "64", "lam": "2", "sample_size": "10000"},
    "frame-gen": {"d": "64", "lam": "2", "sample_size": "10000"},
}


def run(kind: str, cfg: RunConfig, seed: int, out_dir: Path) -> dict:
    """Execute one experiment; returns {filename: sha256} of outputs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(seed)
    started = time.time()
    outputs = []
    notes = {}

    if kind == "sweep":
        records = variance_bits_sweep(cfg.get_schemes("schemes"),
                                      cfg.get_int("d"),
                                      cfg.get_int("n_vectors"),
                                      cfg.get_int("trials"), rng)
        path = out_dir / "sweep.csv"
        write_csv(path, SWEEP_COLUMNS,
                  [(r.scheme_tag, r.d, r.vector_seed, r.alpha_hat, r.stderr,
                    r.bits, r.bits_per_coord, r.up_margin) for r in records])
        outputs.append(path)
        notes["min_up_margin"] = min(r.up_margin for r in records)

    elif kind == "var-compare":
        rows = []
        for spec in cfg.get_schemes("schemes"):
            for d in cfg.get_ints("dims"):
                op = build_operator(spec, d, rng.child(0))
                param = scheme_param_string(spec)
                for j in range(cfg.get_int("n_vectors")):
                    x = rng.child(1).child(j).generator().standard_normal(d)
                    omega_hat, _ = empirical_normalized_variance(
                        op, x, 1, rng.child(2).child(d).child(j))
                    rows.append((op.tag, d, param, j, omega_hat))
        path = out_dir / "varcompare.csv"
        write_csv(path, VARCOMPARE_COLUMNS, rows)
        outputs.append(path)

    elif kind in ("cgd", "dcgd"):
        spec = parse_scheme(cfg.get_str("scheme"))
        gamma = cfg.get_opt_float("gamma")
        max_iter = cfg.get_int("max_iter")
        try:
            if kind == "cgd":
                problem = generate_quadratic(cfg.get_int("d"),
                                             cfg.get_float("kappa"),
                                             rng.child(10))
                traj = cgd_run(problem, spec, gamma, max_iter, rng.child(11))
            else:
                problem = generate_distributed_quadratic(
                    cfg.get_int("n"), cfg.get_int("d"),
                    cfg.get_float("kappa"), rng.child(10))
                traj = dcgd_run(problem, spec, gamma, max_iter, rng.child(11))
        except DivergenceError as exc:
            traj = exc.trajectory
            notes["diverged"] = True
        path = out_dir / "trajectory.csv"
        write_csv(path, TRAJECTORY_COLUMNS,
                  [(traj.scheme_tag, k, s, b) for (k, s, b) in traj.iterates])
        outputs.append(path)
        notes["gamma"] = traj.gamma
        notes["final_subopt"] = traj.iterates[-1][1]

    elif kind in ("rip-estimate", "frame-gen"):
        d = cfg.get_int("d")
        lam = cfg.get_float("lam")
        frame = generate_frame(d, lam, rng.child(0))
        empirical = estimate_rip(frame, cfg.get_int("sample_size"), rng.child(1))
        theoretical = theoretical_rip_params(lam)
        if kind == "frame-gen":
            path = out_dir / f"frame_d{d}_lam{lam:g}_seed{seed}.kfrm"
            save_frame(path, frame, empirical, seed)
            outputs.append(path)
        report = {
            "d": d, "D": frame.D, "lam": lam,
            "empirical": {"delta": empirical.delta, "eta": empirical.eta,
                          "K": empirical.level_K},
            "theoretical": {"delta": theoretical.delta, "eta": theoretical.eta,
                            "K": theoretical.level_K},
        }
        path = out_dir / "rip.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        outputs.append(path)

    else:
        raise ParameterError(f"unknown experiment kind {kind!r}")

    manifest = {
        "kind": kind,
        "seed": seed,
        "config": dict(sorted(cfg.values.items())),
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": {p.name: _sha256(p) for p in outputs},
        "notes": notes,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradcomp", description="gradient-compression experiment runner")
    parser.add_argument("kind", choices=list(DEFAULTS),
                        help="experiment to run")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="output directory "
                        f"(default: ${OUTDIR_ENV} or ./results)")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value")
    args = parser.parse_args(argv)

    out_dir = Path(args.out or os.environ.get(OUTDIR_ENV, "results"))
    try:
        cfg = RunConfig.load(args.kind, args.config, args.override)
        manifest = run(args.kind, cfg, args.seed, out_dir)
    except (ParameterError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(manifest["outputs"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
