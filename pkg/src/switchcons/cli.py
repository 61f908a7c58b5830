"""Command-line runner: ``switchcons {synth,simulate,verify,reproduce-example}``.

Every command writes into ``--out`` (default: the config's ``run.out``):
CSV files with a header row and a flat ``key=value`` summary. Floats are
written with ``repr`` so the same seed gives byte-identical files.

Exit status: 0 success, 2 config error, 3 infeasible synthesis, 4 divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import numkit
from .config import ENGINES, ExperimentConfig, load_config, reference_example
from .errors import (ConfigError, DefectiveMatrixError, DimensionError, DivergenceError,
                     InfeasibleGainError, ModalFormError, NotApplicableError, ScheduleError)
from .switchsim import (consensus_error, propagate_modal_closed_form, simulate_compensator_loop,
                        simulate_diffusive_loop, simulate_observer_loop)
from .synth import (GainDesign, check_condition_fixed, check_condition_switching,
                    design_gamma_fixed, design_gamma_uniform, family_lambda2, modal_decompose,
                    validate_H, validate_K)
from .verify import (ORACLE_MAX_SIZE, check_doubly_stochastic, contraction_directed,
                     contraction_undirected, fit_exponential, gamma_sweep_directed,
                     max_relative_difference, oracle_full_kronecker)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4

REFERENCE_PHI = np.array([[6.5, -5.0], [4.0, -2.5]])

# decay slower than this (per unit time) counts as non-decaying
NONDECAY_RATE = 1e-3


# --------------------------------------------------------------------------
# output helpers

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, complex):
        return repr(x)
    if isinstance(x, np.ndarray):
        return _fmt(x.tolist())
    if isinstance(x, (list, tuple)):
        return json.dumps(_jsonable(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return float(x.real) if x.imag == 0 else [float(x.real), float(x.imag)]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else repr(float(x))
    return x


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_summary(path: Path, record: dict) -> str:
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in record.items())
    path.write_text(text)
    return text


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# shared setup

class Setup:
    """Runtime objects derived from a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = cfg.build_model()
        self.family = cfg.build_family()
        self.schedule = cfg.build_schedule()
        self.schedule.check_family(self.family)
        Q = None if cfg.model.Q is None else np.array(cfg.model.Q)
        try:
            self.mf = modal_decompose(self.model, user_Q=Q)
        except DefectiveMatrixError as exc:
            raise ConfigError(f"{exc}; supply a Jordan basis", "model.Q") from None
        except ModalFormError as exc:
            raise ConfigError(str(exc), "model.Q") from None
        g = cfg.gains
        if g.gamma is not None:
            gamma = np.array(g.gamma)
        elif g.design == "fixed":
            if len(self.family) != 1:
                raise ConfigError("design = 'fixed' needs a single graph; use 'uniform'", "gains.design")
            gamma = design_gamma_fixed(self.mf, self.family[0], g.margin)
        else:
            gamma = design_gamma_uniform(self.mf, self.family, g.margin)
        self.design = GainDesign.from_gammas(self.mf, gamma, K=g.K, H=g.H, margin=g.margin)
        self.w0, self.eta0, self.wtilde0 = cfg.initial_states()

    @property
    def z0(self):
        return self.w0 - self.eta0

    @property
    def x0_modal(self):
        return self.z0 @ self.mf.Q_inv.T


def _load(args) -> ExperimentConfig:
    if getattr(args, "config", None) is None:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _strict(args, cfg) -> bool:
    if args.strict_jordan is None:
        return cfg.gains.strict_jordan
    return args.strict_jordan == "on"


# --------------------------------------------------------------------------
# synth

def synth_report(st: Setup, strict: bool) -> dict:
    mf, fam, design = st.mf, st.family, st.design
    lam2s = [float(v) for v in fam.lambda2s]
    rec = {
        "n": mf.n, "m": fam.m, "modes": len(fam),
        "eigenvalues": list(mf.S_diag), "unstable_modes": mf.r,
        "jordan_blocks": [[lam, size] for lam, size in mf.jordan_blocks] if mf.jordan_blocks else [],
        "S": mf.S, "Q": mf.Q,
        "graph_names": [lap.name for lap in fam],
        "lambda2": lam2s, "lambda2_min": min(lam2s),
        "gamma": design.gamma, "Phi": design.Phi, "margin": design.margin,
        "strict_jordan": strict,
    }
    lam2_min = family_lambda2(list(fam))
    rec["thresholds"] = [float(lam.real) / lam2_min for lam in mf.S_diag[:mf.r]]
    if design.K is not None:
        hk = validate_K(st.model, design.K)
        rec["K_hurwitz"], rec["K_abscissa"] = hk.stable, hk.abscissa
    if design.H is not None:
        hh = validate_H(st.model, design.H)
        rec["H_hurwitz"], rec["H_abscissa"] = hh.stable, hh.abscissa
    rec["stabilizable"] = st.model.is_stabilizable()

    fixed = [check_condition_fixed(design.gamma, mf, lap, strict=strict) for lap in fam]
    rec["fixed_graph_pass"] = [rep.passed for rep in fixed]
    rec["fixed_graph_slack"] = [[mc.slack for mc in rep.modes[:mf.r]] for rep in fixed]
    notes = sorted({note for rep in fixed for note in rep.notes})
    if fam.all_undirected:
        sw = check_condition_switching(float(design.gamma[0]), mf, list(fam))
        rec["switching_pass"] = sw.passed and (not strict or fixed[0].jordan_uniform)
        rec["switching_slack"] = sw.slack
        rec["switching_threshold"] = sw.threshold
        rec["switching_vacuous"] = sw.vacuous
    else:
        rec["switching_pass"] = "n/a"
        notes.append("directed family: no closed-form switching threshold, run verify for the gain sweep")
    rec["notes"] = notes
    return rec


def cmd_synth(args) -> int:
    cfg = _load(args)
    st = Setup(cfg)
    out = _out_dir(args, cfg)
    rec = synth_report(st, _strict(args, cfg))
    sys.stdout.write(write_summary(out / "synth.txt", rec))
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

def _first_below(times, err, frac):
    if err[0] == 0:
        return float(times[0])
    hit = np.nonzero(err < frac * err[0])[0]
    return float(times[hit[0]]) if hit.size else math.nan


def _decay_summary(times, err) -> dict:
    e0, ef = float(err[0]), float(err[-1])
    rate, pref = fit_exponential(times - times[0], err)
    if e0 == 0:
        nondecay = False
    else:
        nondecay = bool(ef >= 0.5 * e0 or not rate > NONDECAY_RATE)
    return {"initial_error": e0, "final_error": ef, "error_ratio": ef / e0 if e0 else 0.0,
            "fitted_rate": rate, "fitted_prefactor": pref,
            "t_below_1pct": _first_below(times, err, 1e-2), "nondecaying_error": nondecay}


def _modal_run(st: Setup):
    """Modal-coordinate solution mapped back to ``z = w - eta``."""
    spi = st.cfg.run.samples_per_interval
    try:
        traj = propagate_modal_closed_form(st.mf, st.design.gamma, st.family, st.schedule,
                                           st.x0_modal, samples_per_interval=spi)
        how = "closed_form"
    except NotApplicableError:
        if st.mf.n * st.family.m > ORACLE_MAX_SIZE:
            raise
        traj = oracle_full_kronecker(st.mf.S, st.design.gamma, st.family, st.schedule, st.x0_modal)
        how = "kronecker"
    z = numkit.real_if_close(traj.agent_states @ st.mf.Q.T, tol=1e-9)
    return traj.times, z, traj.switch_indices, how


def _ode_run(st: Setup, step):
    if st.design.K is None:
        raise ConfigError("the ode engine needs a controller gain", "gains.K")
    if st.design.H is not None and st.model.C is not None:
        return simulate_observer_loop(st.model, st.design, st.family, st.schedule, st.w0,
                                      st.wtilde0, st.eta0, step=step)
    return simulate_compensator_loop(st.model, st.design, st.family, st.schedule, st.w0,
                                     st.eta0, step=step)


def _sigma_rows(schedule):
    rows = [(t, int(mode) + 1) for t, mode in zip(schedule.switch_times, schedule.modes)]
    rows.append((schedule.horizon, int(schedule.modes[-1]) + 1))
    return rows


def _schedule_record(schedule) -> dict:
    return {"seed": schedule.seed if schedule.seed is not None else "none",
            "horizon": schedule.horizon, "dwell_floor": schedule.dwell_floor,
            "switch_times": schedule.switch_times, "sigma": schedule.modes + 1}


def run_simulation(st: Setup, engine: str, out: Path) -> dict:
    m, n = st.family.m, st.mf.n
    rec = {"engine": engine}
    ode = None
    if engine in ("ode", "both"):
        try:
            ode = _ode_run(st, st.cfg.run.step)
        except DivergenceError as exc:
            rec.update({"diverged": True, "divergence_time": exc.time})
            rec.update(_schedule_record(st.schedule))
            write_summary(out / "summary.txt", rec)
            raise
        header = ["t"] + [f"w{i + 1}_{c + 1}" for i in range(m) for c in range(n)]
        header += [f"eta{i + 1}_{c + 1}" for i in range(m) for c in range(n)]
        blocks = [ode.agent_states.reshape(len(ode.times), -1),
                  ode.compensator_states.reshape(len(ode.times), -1)]
        if ode.observer_states is not None:
            header += [f"wt{i + 1}_{c + 1}" for i in range(m) for c in range(n)]
            blocks.append(ode.observer_states.reshape(len(ode.times), -1))
        header.append("e")
        data = np.hstack([ode.times[:, None]] + blocks + [ode.error_series[:, None]])
        write_csv(out / "trajectory.csv", header, data.tolist())
        write_csv(out / "error.csv", ["t", "e"], zip(ode.times.tolist(), ode.error_series.tolist()))
        rec.update(_decay_summary(ode.times, ode.error_series))
    if engine in ("modal", "both"):
        times, z, idx, how = _modal_run(st)
        err = consensus_error(z)
        header = ["t"] + [f"z{i + 1}_{c + 1}" for i in range(m) for c in range(n)] + ["e_z"]
        data = np.hstack([times[:, None], z.reshape(len(times), -1).real, err[:, None]])
        write_csv(out / "modal_trajectory.csv", header, data.tolist())
        rec["modal_method"] = how
        rec["modal_final_z_error"] = float(err[-1])
        if ode is None:
            rec.update(_decay_summary(times, err))
        else:
            _, w_sw = ode.at_switches()
            z_ode = w_sw - ode.compensator_states[ode.switch_indices]
            rec["engine_max_relative_difference"] = max_relative_difference(z_ode, z[idx].real)
    rec["diverged"] = False
    write_csv(out / "sigma.csv", ["t", "sigma"], _sigma_rows(st.schedule))
    rec.update(_schedule_record(st.schedule))
    return rec


def cmd_simulate(args) -> int:
    cfg = _load(args)
    st = Setup(cfg)
    out = _out_dir(args, cfg)
    engine = args.engine or cfg.run.engine
    rec = run_simulation(st, engine, out)
    sys.stdout.write(write_summary(out / "summary.txt", rec))
    return EXIT_OK


# --------------------------------------------------------------------------
# verify

def _certified_coordinate(mf) -> int:
    """Index of the leading modal coordinate that evolves on its own:
    the last entry of the first Jordan block."""
    if mf.jordan_blocks:
        return mf.jordan_blocks[0][1] - 1
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    st = Setup(cfg)
    out = _out_dir(args, cfg)
    fam, sched, mf = st.family, st.schedule, st.mf
    q = _certified_coordinate(mf)
    gamma1 = float(st.design.gamma[q])
    lamA = float(mf.S_diag[q].real)
    x0 = np.real(st.x0_modal[:, q])
    rec = {"certified_coordinate": q + 1, "gamma1": gamma1, "lambdaA1": lamA}

    cols = ["k", "t_end", "h", "sigma", "factor", "scaled_factor", "reference", "product_bound",
            "omega_bound", "deviation", "deviation_bound"]
    if fam.all_undirected:
        rep = contraction_undirected(fam, sched, gamma1, lamA, x0=x0)
        dirrep = contraction_directed(fam, sched, gamma1, lamA)
        rec["d_equals_b_residual"] = max(abs(a.factor - b.factor)
                                         for a, b in zip(rep.per_interval, dirrep.per_interval))
        rec["factor_mismatch"] = rep.factor_mismatch
        rec["telescoping_residual"] = rep.telescoping_residual
        rec["identity_residual"] = rep.identity_residual
        ds_rows = []
        for k, lap in enumerate(fam):
            ds = check_doubly_stochastic(lap, gamma1, sched.dwell_floor)
            ds_rows.append((k + 1, lap.name, ds.symmetry_residual, ds.row_sum_residual,
                            ds.col_sum_residual, ds.second_modulus, ds.passed))
        write_csv(out / "doubly_stochastic.csv",
                  ["sigma", "name", "symmetry_residual", "row_sum_residual", "col_sum_residual",
                   "second_modulus", "passed"], ds_rows)
        rec["doubly_stochastic_pass"] = all(r[-1] for r in ds_rows)
    else:
        rep = contraction_directed(fam, sched, gamma1, lamA, x0=x0)
        sweep = gamma_sweep_directed(fam, sched, gamma1, lamA, x0)
        write_csv(out / "gamma_sweep.csv",
                  ["multiplier", "gamma", "max_scaled_factor", "mean_scaled_factor",
                   "final_deviation", "relative_final_deviation"],
                  [(r.multiplier, r.gamma, float(r.scaled_factors.max()), float(r.scaled_factors.mean()),
                    r.final_deviation, r.final_deviation / r.x0_norm if r.x0_norm else 0.0)
                   for r in sweep])
        rec["identity_residual"] = rep.identity_residual
        rec["xi_bar_last_increment"] = float(rep.xi_increments[-1])

    omega = rep.omega_bounds if rep.omega_bounds is not None else np.full(len(rep.per_interval), math.nan)
    ref = rep.omega_bounds if rep.omega_bounds is not None else rep.product_bounds
    rows = []
    for k, f in enumerate(rep.per_interval):
        rows.append((k + 1, rep.switch_times[k], f.h, f.mode + 1, f.factor, f.scaled,
                     f.expected if not rep.directed else f.bound, rep.product_bounds[k], omega[k],
                     rep.deviations[k], ref[k] * rep.x0_norm))
    write_csv(out / "contraction.csv", cols, rows)
    rec["bound_holds"] = rep.bound_holds()
    rec["fitted_deviation_rate"] = rep.fitted_rate
    rec["final_deviation"] = float(rep.deviations[-1])
    rec["x0_norm"] = rep.x0_norm

    # engine cross-checks in modal coordinates
    if mf.n * fam.m <= ORACLE_MAX_SIZE:
        oracle = oracle_full_kronecker(mf.S, st.design.gamma, fam, sched, st.x0_modal)
        try:
            closed = propagate_modal_closed_form(mf, st.design.gamma, fam, sched, st.x0_modal)
            rec["closed_vs_oracle"] = max_relative_difference(closed.agent_states, oracle.agent_states)
        except NotApplicableError:
            rec["closed_vs_oracle"] = "n/a"
        if not np.iscomplexobj(mf.S):
            rk = simulate_diffusive_loop(mf.S, np.diag(st.design.gamma), fam, sched,
                                         np.real(st.x0_modal), step=cfg.run.step)
            _, rk_sw = rk.at_switches()
            rec["rk4_vs_oracle"] = max_relative_difference(rk_sw, oracle.agent_states.real)
    rec.update(_schedule_record(sched))
    sys.stdout.write(write_summary(out / "verify.txt", rec))
    return EXIT_OK


# --------------------------------------------------------------------------
# reproduce-example

def cmd_reproduce_example(args) -> int:
    cfg = reference_example(seed=0 if args.seed is None else args.seed)
    out = _out_dir(args, cfg)
    st = Setup(cfg)
    rec = run_simulation(st, args.engine or "ode", out)
    rec["Phi"] = st.design.Phi
    rec["phi_max_abs_error"] = float(np.abs(st.design.Phi - REFERENCE_PHI).max())
    rec["phi_check"] = rec["phi_max_abs_error"] < 1e-6
    synth = synth_report(st, strict=False if args.strict_jordan is None else args.strict_jordan == "on")
    rec["thresholds"] = synth["thresholds"]
    rec["switching_pass"] = synth["switching_pass"]
    sys.stdout.write(write_summary(out / "summary.txt", rec))
    return EXIT_OK


# --------------------------------------------------------------------------

def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="switchcons",
                                description="Consensus of linear agents over switching graphs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("synth", "modal form, gains and condition verdicts"),
                           ("simulate", "integrate the closed loop and write trajectories"),
                           ("verify", "contraction certificates and engine cross-checks"),
                           ("reproduce-example", "built-in four-agent example")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="experiment TOML file")
        sp.add_argument("--seed", type=_seed, help="override the schedule seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--engine", choices=ENGINES)
        sp.add_argument("--strict-jordan", choices=("on", "off"), dest="strict_jordan")
    return p


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate, "verify": cmd_verify,
            "reproduce-example": cmd_reproduce_example}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScheduleError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleGainError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
