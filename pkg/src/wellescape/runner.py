"""Task execution for normalized experiment configurations.

Tasks run in list order.  Results needed by later tasks are kept in memory;
when a prerequisite ran in an earlier invocation its artifacts are read back
from the output directory instead.
"""

import logging
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .atlas import ManifoldGraph, ManifoldSampleSet, check_graph_property, fit_graph, sample_manifold
from .capsize import (LABEL_NAMES, SAFE, IntegrationClassifier, ManifoldGraphClassifier,
                      classification_metrics, classify_by_integration, integrity_measure,
                      time_to_capsize)
from .experiments import (Saddle, dividing_pair, eigenstructure_for, hypercube_states,
                          hyperbolic_1dof, hyperbolic_pair, ou_forcing_2dof)
from .dynamics import (QuasiPeriodicForcing, QuasiTerm, ZeroForcing, eckart_1dof,
                       roll_heave_2dof)
from .io import ArtifactStore, read_trajectory
from .saddle import eigenstructure_1dof
from .validation import (advect_manifold_1dof, bvp_manifold_curve, differential_correction,
                         globalize_manifolds, shared_hausdorff)

log = logging.getLogger(__name__)

SIDE_TAG = {0: "", 1: "_plus", -1: "_minus"}
STATE_COLUMNS = ["x", "y", "vx", "vy"]


def build_forcing(cfg):
    f = cfg["forcing"]
    dim = 2 if cfg["model"] == "eckart-1dof" else 4
    if f["kind"] == "none":
        return ZeroForcing(dim)
    if f["kind"] == "quasi":
        return QuasiPeriodicForcing([QuasiTerm(**t) for t in f["terms"]], dim)
    p = cfg["parameters"]
    return ou_forcing_2dof(f["seed"], p["h"], p["kx"], cfg["grid"]["T"], f["fine_points"])


def build_system(cfg, forcing, side):
    p = cfg["parameters"]
    if cfg["model"] == "eckart-1dof":
        return eckart_1dof(p["k"], forcing), eigenstructure_1dof(p["k"])
    return (roll_heave_2dof(p["h"], p["kx"], p["ky"], side, forcing),
            eigenstructure_for(p["h"], p["kx"], p["ky"], side))


class Runner:
    """Executes the tasks of one normalized configuration."""

    def __init__(self, cfg, out_dir=None, threads=None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg["output"])
        self.threads = threads or cfg["threads"]
        self.store = ArtifactStore(self.out, cfgmod.config_hash(cfg), cfg["seed"])
        self.sides = (0,) if cfg["model"] == "eckart-1dof" else (1, -1)
        self._forcing = None
        self.saddles = None
        self.samples = {}
        self.graphs = None
        self.summary = {}

    @property
    def forcing(self):
        if self._forcing is None:
            self._forcing = build_forcing(self.cfg)
        return self._forcing

    def run(self):
        for i, task in enumerate(self.cfg["tasks"]):
            log.info("task %d: %s", i, task["type"])
            method = getattr(self, "task_" + task["type"].replace("-", "_"))
            self.summary[f"{i}:{task['type']}"] = method(task)
        return self.summary

    # ------------------------------------------------------------ prerequisites

    def _saddles(self):
        if self.saddles is None:
            out = {}
            for side in self.sides:
                name = f"hyp_traj{SIDE_TAG[side]}.csv"
                meta = self.store.read_sidecar(name).get("metadata", {})
                X = read_trajectory(self.store.path(name), meta.get("grid"))
                sys, eig = build_system(self.cfg, self.forcing, side)
                out[side] = Saddle(side, sys, eig, X, None)
            self.saddles = out
        return self.saddles

    def _samples(self, kind):
        if kind not in self.samples:
            out = {}
            for side in self.sides:
                name = f"manifold_{kind}{SIDE_TAG[side]}.csv"
                meta = self.store.read_sidecar(name).get("metadata", {})
                out[side] = ManifoldSampleSet.from_csv(self.store.path(name), meta)
            self.samples[kind] = out
        return self.samples[kind]

    def _graphs(self):
        if self.graphs is None:
            self.graphs = {s: ManifoldGraph.from_json(self.store.path(f"graph{SIDE_TAG[s]}.json")
                                                      .read_text()) for s in self.sides}
        return self.graphs

    # ------------------------------------------------------------------- tasks

    def task_hyp_traj(self, task):
        c, tol = self.cfg, self.cfg["tolerances"]
        g = c["grid"]
        if c["model"] == "eckart-1dof":
            s = hyperbolic_1dof(c["parameters"]["k"], self.forcing, g["T"], g["N"], tol["eps_c"],
                                tol["eps_f"], task["guess"], task["damping"], tol["max_iter"])
            self.saddles = {0: s}
        else:
            p = c["parameters"]
            self.saddles = hyperbolic_pair(self.forcing, p["h"], p["kx"], p["ky"], g["T"], g["N"],
                                           tol["eps_c"], tol["eps_f"], task["guess"],
                                           task["damping"], tol["max_iter"])
        iterations = {}
        for side, s in self.saddles.items():
            rep = s.report.to_dict()
            log.info("hyperbolic trajectory%s: Newton converged in %d iterations",
                     SIDE_TAG[side].replace("_", " "), rep["iterations"])
            self.store.write_trajectory(f"hyp_traj{SIDE_TAG[side]}.csv", s.X,
                                        {"newton": rep, "grid": s.X.grid.to_dict(), "side": side,
                                         "forcing": c["forcing"]["kind"]})
            iterations[{0: "saddle", 1: "plus", -1: "minus"}[side]] = rep["iterations"]
        self.store.write_json("newton_iterations.json", iterations)
        return iterations

    def task_manifold_sample(self, task):
        saddles = self._saddles()
        out = {}
        for side, s in saddles.items():
            S = sample_manifold(s.sys, s.eig, s.X, task["kind"], side, task["bounds"],
                                task["counts"], task["t0"], eps_c=task["eps_c"],
                                eps_f=task["eps_f"], max_iter=task["max_iter"],
                                growth=task["growth"], threads=self.threads)
            name = f"manifold_{task['kind']}{SIDE_TAG[side]}.csv"
            self.store.write_with(name, S.to_csv, S.metadata())
            out[side] = S
        self.samples[task["kind"]] = out
        return {str(side): {"samples": len(S), "failed": S.n_failed} for side, S in out.items()}

    def task_fit_graphs(self, task):
        samples = self._samples("stable")
        self.graphs = {}
        info = {}
        for side, S in samples.items():
            g = fit_graph(S, axis=-1, tail=task["tail"])
            ok = check_graph_property(S)
            self.graphs[side] = g
            meta = {"shape": g.rbf.c_, "condition": g.rbf.condition_, "graph_property": ok,
                    "n_centers": len(S)}
            self.store.write_text(f"graph{SIDE_TAG[side]}.json", g.to_json() + "\n", meta)
            info[str(side)] = meta
        return info

    def task_classify(self, task):
        graphs = self._graphs()
        clf = ManifoldGraphClassifier.from_graphs(graphs[1], graphs[-1],
                                                  on_conflict=task["on_conflict"])
        X = hypercube_states(task["samples"], self.cfg["seed"])
        mp, mm, outside = clf.margins(X)
        pred = clf.predict(X)
        margin = np.where(pred == 1, mp, np.where(pred == -1, mm,
                                                  np.where(np.abs(mp) <= np.abs(mm), mp, mm)))
        cols = [X[:, 0], X[:, 1], X[:, 2], X[:, 3], pred.astype(float), margin]
        header = STATE_COLUMNS + ["label", "margin", "tcross"]
        summary = {"n": len(X), "conflicts": int(np.sum((mp > 0) & (mm < 0))),
                   "extrapolated_fraction": float(outside.mean())}
        volumes = {"hypercube": 400.0, "safe_fraction_predicted": float(np.mean(pred == SAFE))}
        if task["oracle"]:
            sys = self._saddles()[1].sys
            truth = classify_by_integration(sys, X, 0.0, task["escape_y2"], task["t_max"],
                                            task["step"])
            tcross = np.where(truth.labels == SAFE, np.nan, truth.times)
            cols += [tcross, truth.labels.astype(float)]
            header += ["oracle"]
            summary.update(classification_metrics(pred, truth.labels))
            summary["oracle_flagged"] = int(np.sum(truth.flagged))
            volumes["safe_fraction_oracle"] = float(np.mean(truth.labels == SAFE))
        else:
            cols.append(np.full(len(X), np.nan))
        summary["volumes"] = volumes
        self.store.write_table("classification.csv", header, cols,
                               {"labels": {str(k): v for k, v in LABEL_NAMES.items()}})
        self.store.write_json("classification_summary.json", summary)
        if "accuracy" in summary:
            log.info("classification accuracy %.4f, sensitivity %.4f, specificity %.4f",
                     summary["accuracy"], summary["sensitivity"], summary["specificity"])
        return summary

    def task_dividing(self, task):
        saddles = self._saddles()
        div = dividing_pair(saddles, task["t_end"], task["q_step"], self.threads, task["eps_c"],
                            task["eps_f"], task["max_iter"])
        for side, d in div.items():
            self.store.write_text(f"dividing{SIDE_TAG[side]}.json", d.to_json() + "\n",
                                  {"window": list(d.window), "nodes": len(d.times)})
        info = {"window": list(div[1].window)}
        n = task["capsize_samples"]
        if n:
            X = hypercube_states(n, self.cfg["seed"])
            res = time_to_capsize(saddles[1].sys, X, 0.0, [div[1], div[-1]], step=task["step"])
            status = np.array([r.status for r in res])
            side = np.array([float(r.side) for r in res])
            t = np.array([np.nan if r.time is None else r.time for r in res])
            self.store.write_table("capsize_times.csv", STATE_COLUMNS + ["status", "side", "time"],
                                   [X[:, 0], X[:, 1], X[:, 2], X[:, 3], status, side, t])
            info["capsized_fraction"] = float(np.mean(status == "capsized"))
        self.store.write_json("dividing_summary.json", info)
        return info

    def task_integrity(self, task):
        h = self.cfg["parameters"]["h"]
        if task["classifier"] == "graph":
            g = self._graphs()
            clf = ManifoldGraphClassifier.from_graphs(g[1], g[-1], on_conflict="nearest")
        else:
            sys = build_system(self.cfg, self.forcing, 1)[0]
            clf = IntegrationClassifier(sys, 0.0, task["escape_y2"], task["t_max"],
                                        task["step"]).fit()
        res = integrity_measure(clf, h, task["samples"], self.cfg["seed"])
        out = res.to_dict()
        out["classifier"] = task["classifier"]
        self.store.write_json("integrity.json", out)
        log.info("relative safe volume %.4f +- %.4f", res.relative, res.stderr)
        return out

    def task_advect_check(self, task):
        s = self._saddles()[0]
        info = {}
        for branch in task["branches"]:
            t_seed = task[f"t_{branch}"]
            curve = advect_manifold_1dof(s.sys, s.eig, s.X, branch, t_seed, task["n_seed"],
                                         task["extent"], task["dT"], task["alpha"],
                                         task["dalpha"], task["delta"], task["max_points"])
            qs = np.linspace(-task["extent"], task["extent"], task["curve_points"])
            ref = bvp_manifold_curve(s.sys, s.eig, s.X, branch, 0.0, qs)
            dist = shared_hausdorff(curve.points, ref)
            self.store.write_array(f"advected_{branch}.csv", ["x", "v"], curve.points,
                                   {"t_seed": t_seed, "inserted": curve.inserted})
            self.store.write_array(f"bvp_curve_{branch}.csv", ["x", "v"], ref)
            info[branch] = {"hausdorff": dist, "t_seed": t_seed, "points": len(curve.points),
                            "inserted": curve.inserted}
            log.info("%s branch: Hausdorff distance %.3g", branch, dist)
        self.store.write_json("advect_check.json", info)
        return info

    def task_autonomous_flux(self, task):
        h = self.cfg["parameters"]["h"]
        orbit = differential_correction(h, task["energy"], task["amplitude"])
        doc = orbit.to_dict()
        doc.update(closure=orbit.closure(), determinant=float(np.linalg.det(orbit.monodromy)))
        self.store.write_json("periodic_orbit.json", doc)
        self.store.write_array("periodic_orbit.csv", STATE_COLUMNS, orbit.sample(200))
        info = {"orbit": {"period": orbit.period, "energy": orbit.energy,
                          "closure": doc["closure"]}}
        for branch in task["branches"]:
            b = globalize_manifolds(orbit, task["eps"], branch, task["n_phases"], task["t_budget"])
            cols = [b.phases, b.seed_signs] + list(b.section_points.T) + [b.section_times,
                                                                          b.truncated.astype(float)]
            self.store.write_table(f"section_{branch}.csv",
                                   ["phase", "sign"] + STATE_COLUMNS + ["time", "truncated"], cols,
                                   {"eps": b.eps, "max_energy_error": b.max_energy_error})
            info[branch] = {"max_energy_error": b.max_energy_error,
                            "truncated": int(b.truncated.sum()), "seeds": len(b.truncated)}
        self.store.write_json("autonomous_flux.json", info)
        return info
