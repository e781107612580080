"""Command line experiment runner.

Usage::

    podrom all --preset run-gv1-desk --out results/
    podrom errors --config my.yaml --out results/ --threads 2

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 solver failure, 4 rank deficiency.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import io as tio
from .analytics import Stopwatch, build_report, emit_report, reference_error_curve
from .errors import ConvergenceError, IllPosedRomError, InvalidArgumentError, RankDeficientError, RomFailure
from .mesh import build_grid
from .optimizer import PlacementSetup, optimize_placement, save_trace
from .pod import (
    FLAGS,
    compute_pod_basis,
    cross_gramian,
    pod_from_gramian,
    save_basis,
    save_spectrum,
    select_rank,
)
from .problems import make_problem, perturbed_grid
from .rom import assemble_rom, rom_step_sequence, save_rom_system, save_trajectory
from .snapshots import (
    TimeGrid,
    append_difference_quotients,
    save_snapshots,
    state_solve,
    state_solve_on_grids,
)

__all__ = ["ExperimentConfig", "load_config", "preset_names", "run_pipeline", "main"]

log = logging.getLogger("podrom")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_SOLVER, EXIT_RANK = 0, 1, 2, 3, 4
STAGES = ("simulate", "pod", "rom", "errors", "snapopt", "report", "all")

DEFAULTS = {
    "problem": {"name": "heat-gv1", "params": {}},
    "discretization": {"m": 200, "n_t": 400, "perturb": 0.0},
    "pod": {
        "space": "H",
        "flag": "svd",
        "ell": None,
        "energy_loss": None,
        "difference_quotients": True,
        "kernel": "lapack",
        "compare_flags": False,
    },
    "rom": {"treatment": None, "load_mode": "endpoint", "ell": None},
    "errors": {"ells": None, "ell_max": 40, "extra_norms": [], "reference": None},
    "snapopt": None,
    "seed": 0,
}


class ConfigError(InvalidArgumentError):
    pass


@dataclass
class ExperimentConfig:
    """Validated experiment description (see the presets for examples)."""

    problem: dict
    discretization: dict
    pod: dict
    rom: dict
    errors: dict
    snapopt: dict | None = None
    seed: int = 0
    name: str = "custom"
    raw: dict = field(default_factory=dict, repr=False)


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _positive_int(value, label, minimum=1):
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= minimum,
             f"{label} must be an integer >= {minimum}, got {value!r}")
    return value


def parse_config(data, name="custom"):
    """Check a raw mapping and fill in defaults."""
    _require(isinstance(data, dict), "configuration must be a mapping")
    unknown = set(data) - set(DEFAULTS) - {"name", "output"}
    _require(not unknown, f"unknown configuration sections: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, {k: v for k, v in data.items() if k not in ("name", "output")})
    prob = cfg["problem"]
    _require(isinstance(prob.get("name"), str), "problem.name must be a string")
    _require(isinstance(prob.get("params", {}), dict), "problem.params must be a mapping")
    disc = cfg["discretization"]
    _positive_int(disc["m"], "discretization.m")
    _positive_int(disc["n_t"], "discretization.n_t", 2)
    _require(isinstance(disc["perturb"], (int, float)) and 0 <= disc["perturb"] < 1,
             "discretization.perturb must lie in [0, 1)")
    pod = cfg["pod"]
    _require(pod["space"] in ("H", "V"), "pod.space must be 'H' or 'V'")
    _require(pod["flag"] in FLAGS, f"pod.flag must be one of {FLAGS}")
    _require(pod["kernel"] in ("lapack", "jacobi"), "pod.kernel must be 'lapack' or 'jacobi'")
    _require((pod["ell"] is None) or (pod["energy_loss"] is None), "give either pod.ell or pod.energy_loss, not both")
    if pod["ell"] is not None:
        _positive_int(pod["ell"], "pod.ell")
    if pod["energy_loss"] is not None:
        _require(isinstance(pod["energy_loss"], (int, float)) and 0 < pod["energy_loss"] < 1,
                 "pod.energy_loss must lie in (0, 1)")
    rom = cfg["rom"]
    _require(rom["treatment"] in (None, "none", "full", "linearized", "projected"), "invalid rom.treatment")
    _require(rom["load_mode"] in ("endpoint", "average"), "rom.load_mode must be 'endpoint' or 'average'")
    if rom["ell"] is not None:
        _positive_int(rom["ell"], "rom.ell")
    err = cfg["errors"]
    if err["ells"] is not None:
        _require(isinstance(err["ells"], list) and all(isinstance(e, int) and e >= 0 for e in err["ells"]),
                 "errors.ells must be a list of nonnegative integers")
    _positive_int(err["ell_max"], "errors.ell_max")
    _require(isinstance(err["extra_norms"], list) and all(n in ("H", "V") for n in err["extra_norms"]),
             "errors.extra_norms must list 'H' and/or 'V'")
    ref = err["reference"]
    if ref is not None:
        _require(isinstance(ref, dict), "errors.reference must be a mapping")
        _positive_int(ref.get("fine_n_t"), "errors.reference.fine_n_t", 2)
        levels = ref.get("n_t")
        _require(isinstance(levels, list) and levels and all(isinstance(v, int) and v >= 2 for v in levels),
                 "errors.reference.n_t must be a list of integers >= 2")
    so = cfg["snapopt"]
    if so is not None:
        _require(isinstance(so, dict), "snapopt must be a mapping")
        so = _merge({"k": 2, "tau0": None, "budget": 600, "base_n_t": 11, "fine_n_t": 101,
                     "ell": 3, "space": "V", "method": "nelder-mead", "m": None}, so)
        _positive_int(so["k"], "snapopt.k")
        _require(isinstance(so["tau0"], list) and len(so["tau0"]) == so["k"], "snapopt.tau0 must list k instants")
        _positive_int(so["budget"], "snapopt.budget", so["k"] + 1)
        _require(so["space"] in ("H", "V"), "snapopt.space must be 'H' or 'V'")
        _require(so["method"] in ("nelder-mead", "lbfgsb"), "snapopt.method must be 'nelder-mead' or 'lbfgsb'")
        cfg["snapopt"] = so
    _require(isinstance(cfg["seed"], int), "seed must be an integer")
    return ExperimentConfig(
        problem=prob,
        discretization=disc,
        pod=pod,
        rom=rom,
        errors=err,
        snapopt=cfg["snapopt"],
        seed=cfg["seed"],
        name=data.get("name", name),
        raw=data,
    )


def preset_names():
    root = resources.files("podrom") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(path=None, preset=None):
    """Read a YAML file or a shipped preset (the file overrides the preset)."""
    data = {}
    name = "custom"
    try:
        if preset is not None:
            res = resources.files("podrom") / "presets" / f"{preset}.yaml"
            if not res.is_file():
                raise ConfigError(f"unknown preset {preset!r}; available: {preset_names()}")
            data = yaml.safe_load(res.read_text()) or {}
            name = preset
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"configuration file not found: {p}")
            data = _merge(data, yaml.safe_load(p.read_text()) or {})
            name = data.get("name", p.stem)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    if preset is None and path is None:
        raise ConfigError("give --config or --preset")
    return parse_config(data, name)


# -- pipeline ----------------------------------------------------------------------------


class _Pipeline:
    def __init__(self, cfg, out, threads):
        self.cfg = cfg
        self.out = Path(out)
        self.threads = threads
        self.watch = Stopwatch()
        self.problem = make_problem(cfg.problem["name"], **cfg.problem.get("params", {}))
        self.state = {}
        self.notes = []

    def write(self, name, writer, *args):
        writer(*args, self.out / name)

    def simulate(self):
        if "trajectory" in self.state:
            return
        d = self.cfg.discretization
        a, b = self.problem.domain
        tgrid = TimeGrid.uniform(self.problem.horizon, d["n_t"])
        space = self.cfg.pod["space"]
        with self.watch("fe_solve"):
            if d["perturb"] > 0:
                rng = np.random.default_rng(self.cfg.seed)
                grids = [perturbed_grid(a, b, d["m"], d["perturb"], rng) for _ in range(d["n_t"])]
                traj = state_solve_on_grids(grids, self.problem, tgrid, inner_product=space)
            else:
                traj = state_solve(build_grid(a, b, d["m"]), self.problem, tgrid, inner_product=space)
        snaps = traj
        if self.cfg.pod["difference_quotients"] and traj.homogeneous:
            snaps = append_difference_quotients(traj)
        elif self.cfg.pod["difference_quotients"]:
            self.notes.append("difference quotients skipped: snapshots live on different grids")
        self.state.update(trajectory=traj, snapshots=snaps, tgrid=tgrid)
        save_snapshots(snaps, self.out / "snapshots.csv")

    def _basis(self, flag):
        snaps = self.state["snapshots"]
        pod = self.cfg.pod
        if snaps.homogeneous:
            full = compute_pod_basis(snaps, pod["space"], flag=flag, kernel=pod["kernel"])
        else:
            full = pod_from_gramian(cross_gramian(snaps, pod["space"], workers=self.threads), snaps,
                                    kernel=pod["kernel"])
        return full

    def pod(self):
        if "basis" in self.state:
            return
        self.simulate()
        pod = self.cfg.pod
        with self.watch("pod_offline"):
            full = self._basis(pod["flag"])
        if pod["ell"] is not None:
            if pod["ell"] > full.rank:
                raise RankDeficientError(f"requested {pod['ell']} modes but the numerical rank is {full.rank}",
                                         rank=full.rank)
            ell = pod["ell"]
        elif pod["energy_loss"] is not None:
            ell = select_rank(full, pod["energy_loss"])
        else:
            ell = full.rank
        self.state.update(full_basis=full, basis=full.truncate(ell))
        save_basis(full.truncate(ell), self.out / "basis.csv")
        save_spectrum(full, self.out / "spectrum.csv")
        if pod["compare_flags"]:
            self.compare_flags()

    def compare_flags(self):
        bases = {self.cfg.pod["flag"]: self.state["full_basis"]}
        for flag in FLAGS:
            if flag not in bases:
                bases[flag] = self._basis(flag)
        for flag in FLAGS:
            save_spectrum(bases[flag], self.out / f"spectrum_{flag}.csv")
        n = max(b.spectrum.size for b in bases.values())
        rows = []
        for i in range(n):
            vals = [bases[f].spectrum[i] if i < bases[f].spectrum.size else float("nan") for f in FLAGS]
            ref = vals[0]
            rel = [abs(v - ref) / abs(ref) if ref else float("nan") for v in vals[1:]]
            rows.append([i + 1] + vals + rel)
        cols = ["i"] + [f"lambda_{f}" for f in FLAGS] + [f"reldiff_{f}" for f in FLAGS[1:]]
        meta = [("format", "podrom-flag-agreement-v1")] + [(f"rank_{f}", bases[f].rank) for f in FLAGS]
        tio.write_table(self.out / "flag_agreement.csv", meta, cols, rows)
        self.state["flag_bases"] = bases

    def _treatment(self):
        t = self.cfg.rom["treatment"]
        if t is None:
            t = "full" if self.problem.cubic else "none"
        return t

    def rom(self):
        self.pod()
        basis = self.state["basis"]
        if self.cfg.rom["ell"] is not None:
            if self.cfg.rom["ell"] > basis.ell:
                raise RankDeficientError(f"rom.ell {self.cfg.rom['ell']} exceeds the basis size {basis.ell}",
                                         rank=basis.ell)
            basis = basis.truncate(self.cfg.rom["ell"])
        with self.watch("rom_solve"):
            system = assemble_rom(basis, self.state["snapshots"], self.problem, self._treatment(),
                                  self.state["tgrid"], self.cfg.rom["load_mode"])
            traj = rom_step_sequence(system)
        save_rom_system(system, self.out / "rom_system.csv")
        save_trajectory(traj, self.out / "rom_trajectory.csv")

    def _ells(self, basis):
        e = self.cfg.errors
        if e["ells"] is not None:
            return [x for x in e["ells"] if x <= basis.ell]
        return list(range(0, min(e["ell_max"], basis.ell) + 1))

    def errors(self):
        self.pod()
        full = self.state["full_basis"]
        ells = self._ells(full)
        report = build_report(self.state["snapshots"], full, self.problem, ells, self._treatment(),
                              load_mode=self.cfg.rom["load_mode"])
        for norm in self.cfg.errors["extra_norms"]:
            if norm != full.space.selector:
                r2 = build_report(self.state["snapshots"], full, self.problem, ells, self._treatment(), norm=norm,
                                  load_mode=self.cfg.rom["load_mode"])
                report.extra[f"rom_error_{norm}"] = r2.rom_error
        for flag, b in self.state.get("flag_bases", {}).items():
            if flag == self.cfg.pod["flag"]:
                continue
            rb = build_report(self.state["snapshots"], b, self.problem, [e for e in ells if e <= b.ell],
                              self._treatment(), load_mode=self.cfg.rom["load_mode"])
            col = np.full(len(ells), np.nan)
            col[: rb.rom_error.size] = rb.rom_error
            report.extra[f"rom_error_{flag}"] = col
            report.failures.extend((ell, f"{flag}:{kind}", msg) for ell, kind, msg in rb.failures)
        report.timings.update(self.watch.records)
        report.notes.extend(self.notes)
        emit_report(report, self.out / "report")
        ref = self.cfg.errors["reference"]
        if ref is not None:
            self.reference_curves(ref)
        self.state["report"] = report

    def reference_curves(self, ref):
        a, b = self.problem.domain
        grid = build_grid(a, b, self.cfg.discretization["m"])
        fine = state_solve(grid, self.problem, TimeGrid.uniform(self.problem.horizon, ref["fine_n_t"]))
        rows = []
        for n_t in ref["n_t"]:
            traj = state_solve(grid, self.problem, TimeGrid.uniform(self.problem.horizon, n_t))
            snaps = append_difference_quotients(traj) if self.cfg.pod["difference_quotients"] else traj
            basis = compute_pod_basis(snaps, self.cfg.pod["space"], flag=self.cfg.pod["flag"])
            ells = self._ells(basis)
            errs = reference_error_curve(snaps, fine, basis, ells, self.problem, norm=self.cfg.pod["space"])
            rows.extend([n_t, ell, err] for ell, err in zip(ells, errs))
        tio.write_table(self.out / "reference_errors.csv",
                        [("format", "podrom-reference-errors-v1"), ("fine_n_t", ref["fine_n_t"])],
                        ["n_t", "ell", "error"], rows)

    def snapopt(self):
        so = self.cfg.snapopt
        if so is None:
            raise ConfigError("the configuration has no snapopt section")
        a, b = self.problem.domain
        m = so["m"] or self.cfg.discretization["m"]
        T = self.problem.horizon
        setup = PlacementSetup(self.problem, build_grid(a, b, m), TimeGrid.uniform(T, so["base_n_t"]),
                               TimeGrid.uniform(T, so["fine_n_t"]), space=so["space"], ell=so["ell"])
        with self.watch("snapopt"):
            res = optimize_placement(so["tau0"], setup, budget=so["budget"], seed=self.cfg.seed,
                                     method=so["method"])
        save_trace(res, self.out / "snapopt_trace.csv")
        placement = {
            "tau": [float(t) for t in res.placement.tau],
            "objective": res.value,
            "initial_objective": res.initial_value,
            "reduction": res.reduction,
            "complete": res.complete,
            "evaluations": res.evaluations,
            "restarts": res.restarts,
            "merged_times": [float(t) for t in res.placement.merged_times],
            "merged_weights": [float(w) for w in res.placement.merged_weights],
        }
        (self.out / "snapopt_placement.json").write_text(json.dumps(placement, indent=2, sort_keys=True) + "\n")

    def report(self):
        self.errors()
        lines = [f"experiment: {self.cfg.name}", f"problem: {self.problem.name}"]
        full = self.state["full_basis"]
        lines.append(f"pod: space={full.space.selector} method={full.method} rank={full.rank} ell={self.state['basis'].ell}")
        lines.append(f"snapshots: {len(self.state['snapshots'])}")
        (self.out / "summary.txt").write_text("\n".join(lines) + "\n")
        timings = dict(self.watch.records)
        (self.out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")


def run_pipeline(config, stage="all", out="podrom-out", threads=1, seed=None):
    """Run ``stage`` (and what it depends on) and write the outputs into ``out``.

    Files are produced in a scratch directory and moved into ``out`` only on
    success, so a failed run leaves no partial results. Returns the exit code.
    """
    if stage not in STAGES:
        log.error("unknown stage %s", stage)
        return EXIT_CONFIG
    try:
        cfg = config if isinstance(config, ExperimentConfig) else parse_config(config)
        if seed is not None:
            cfg = copy.copy(cfg)
            cfg.seed = int(seed)
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        scratch = Path(tempfile.mkdtemp(prefix=".podrom-", dir=out.parent))
    except (InvalidArgumentError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        pipe = _Pipeline(cfg, scratch, threads)
        if stage == "all":
            pipe.report()
            pipe.rom()
            if cfg.snapopt is not None:
                pipe.snapopt()
            (scratch / "timings.json").write_text(json.dumps(pipe.watch.records, indent=2, sort_keys=True) + "\n")
        else:
            getattr(pipe, stage)()
        out.mkdir(parents=True, exist_ok=True)
        for item in sorted(scratch.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            shutil.move(str(item), str(target))
        return EXIT_OK
    except RankDeficientError as exc:
        log.error("rank deficiency: %s (numerical rank %s)", exc, exc.rank)
        return EXIT_RANK
    except (ConvergenceError, IllPosedRomError, RomFailure) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except InvalidArgumentError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as exit code 1
        log.exception("unexpected failure: %s", exc)
        return EXIT_OTHER
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="podrom", description="POD model reduction experiments for 1D parabolic PDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--preset", help="shipped preset name (see 'podrom presets')")
        p.add_argument("--out", default="podrom-out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Gramian assembly")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="podrom: %(message)s")
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.preset)
    except InvalidArgumentError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return run_pipeline(cfg, args.command, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
