"""Command-line pipeline: KL model, forward statistics, inversion and verification.

Exit codes: 0 success, 1 other failure (including a failed verification),
2 configuration error, 3 cache corruption, 4 rejected shape sample,
5 estimator failure.  Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__, kernels
from .bayes import EstimatorFailure, ml_ratio_posterior, posterior_surface_report, synthesize_observations
from .bem import WaveContext, solve
from .bem.potential import eval_potential, eval_potential_normal_derivative
from .cache import CacheCorruption, DiskCache
from .config import ConfigError, apply_seed_overrides, config_hash, load, resolve
from .container import atomic_write_bytes, encode
from .geometry import builtin_geometry, cuboid_shell, read_patch_file, sphere, write_vtk
from .interface import InterfaceCauchyData, InterfaceGrid, SecondMomentData, correlation_at, eval_from_interface
from .mie import sound_soft_sphere
from .mlq import Evaluator, LevelHierarchy, ml_estimate
from .pipeline import ForwardModel
from .quadrature import AnisotropyWeights
from .randomfield import SampleRejected, compute_kl, deform_surface, gaussian_kernel

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_CACHE, EXIT_REJECTED, EXIT_ESTIMATOR = 0, 1, 2, 3, 4, 5
MODES = ("kl", "forward-mean", "forward-variance", "invert", "verify")


# -- builders (shared with tests) ---------------------------------------------------


def build_geometry(cfg):
    g = cfg["geometry"]
    if "file" in g:
        return read_patch_file(g["file"])
    return builtin_geometry(g["name"], **g.get("params", {}))


def build_interface(cfg, surface) -> InterfaceGrid:
    ic = cfg["interface"]
    if "lower" in ic and "upper" in ic:
        lo, hi = np.asarray(ic["lower"], float), np.asarray(ic["upper"], float)
    else:
        lo, hi = surface.bounding_box()
        lo, hi = lo - ic["margin"], hi + ic["margin"]
    T = cuboid_shell(lo, hi, tuple(ic["splits"]))
    return InterfaceGrid(T, ic["nodes"], ic["quad_order"])


def build_context(cfg) -> WaveContext:
    return WaveContext(cfg["kappa"], tuple(cfg["direction"]), cfg["eta"])


def build_kl(cfg, surface):
    k = cfg["kl"]
    kern = gaussian_kernel(cfg["kernel"]["amplitude"], cfg["kernel"]["length"])
    return compute_kl(surface, kern, k["degree"], k["level"], k["tol"], k["trace_frac"], k["max_modes"])


def build_hierarchy(cfg, kl, L=None) -> LevelHierarchy:
    L = cfg["max_level"] if L is None else L
    if cfg["rule"] == "qmc":
        b = cfg["budget"]
        return LevelHierarchy.qmc(L, kl.rank, b["a"], b["r"], b["n_min"], cfg["qmc_offset"])
    sg = cfg["sparse_grid"]
    return LevelHierarchy.sparse(L, AnisotropyWeights.from_eigenvalues(kl.eigenvalues), sg["q0"], sg["step"])


def checkpoint_points(cfg, surface):
    c = cfg["checkpoints"]
    center = c["center"]
    if center is None:
        lo, hi = surface.bounding_box()
        center = 0.5 * (lo + hi)
    rng = np.random.default_rng(c["seed"])
    v = rng.standard_normal((c["count"], 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return np.asarray(center, float) + c["radius"] * v


def surface_sample_points(surface, n):
    """``n x n`` cell-centred parameter points per patch and their images."""
    t = (np.arange(n) + 0.5) / n
    U, V = np.meshgrid(t, t, indexing="ij")
    u, v = U.ravel(), V.ravel()
    pts = np.concatenate([p.evaluate(u, v) for p in surface.patches])
    return u, v, pts


# -- output helpers --------------------------------------------------------------------


class Outputs:
    """Deterministic artifact writer recording a checksum per file."""

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.files = {}

    def _record(self, name, data: bytes):
        atomic_write_bytes(os.path.join(self.root, name), data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name, header, rows):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([v if isinstance(v, (str, int, np.integer)) else repr(float(v)) for v in row])
        self._record(name, buf.getvalue().encode())

    def container(self, name, kind, meta, arrays):
        self._record(name, encode(kind, meta, arrays))

    def vtk(self, name, surface, fields=None, n_per_element=4):
        path = os.path.join(self.root, name)
        write_vtk(surface, path, n_per_element, fields)
        with open(path, "rb") as fh:
            self.files[name] = hashlib.sha256(fh.read()).hexdigest()


def _complex_rows(points, values):
    return [list(p) + [z.real, z.imag] for p, z in zip(points, values)]


# -- modes ------------------------------------------------------------------------------------


class Run:
    def __init__(self, cfg, out_dir, threads=1, log=None):
        self.cfg = cfg
        self.out = Outputs(out_dir)
        self.threads = threads
        self.timings = {}
        self.extra = {}
        self.log = log or (lambda msg: None)
        cache_dir = cfg["cache"] or os.path.join(out_dir, "cache")
        self.cache = DiskCache(cache_dir)

    def stage(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t

        return _T()

    # shared pieces
    def setup_forward(self):
        cfg = self.cfg
        with self.stage("geometry"):
            self.surface = build_geometry(cfg)
            self.grid = build_interface(cfg, self.surface)
            self.ctx = build_context(cfg)
        with self.stage("kl"):
            self.kl, self.factor, _ = build_kl(cfg, self.surface)
        self.write_kl()
        self.model = ForwardModel(self.kl, self.ctx, self.grid, cfg["degree"], cfg["level_offset"])
        self.evaluator = Evaluator(self.model, self.threads, self.cache, cfg["checkpoint_every"])
        self.hierarchy = build_hierarchy(cfg, self.kl)
        self.extra["hierarchy"] = self.hierarchy.describe()

    def write_kl(self):
        kl = self.kl
        meta = {
            "degree": kl.space.degree,
            "level": kl.space.level,
            "rank": kl.rank,
            "n_global": kl.space.n,
            "kernel": self.cfg["kernel"],
            "trace_frac": self.cfg["kl"]["trace_frac"],
            "cholesky_rank": int(self.factor.rank),
            "cholesky_trace_error": float(self.factor.trace_error),
        }
        self.out.container("kl.bin", "kl-expansion", meta, {"eigenvalues": kl.eigenvalues, "modes": kl.modes, "mean": kl.mean})
        cs = np.cumsum(kl.eigenvalues)
        self.out.csv(
            "eigenvalues.csv", ["k", "lambda", "cumulative"],
            [[k + 1, lam, c] for k, (lam, c) in enumerate(zip(kl.eigenvalues, cs))],
        )

    def mode_kl(self):
        cfg = self.cfg
        with self.stage("geometry"):
            self.surface = build_geometry(cfg)
        with self.stage("kl"):
            self.kl, self.factor, _ = build_kl(cfg, self.surface)
        self.write_kl()
        kl = self.kl
        fields = {}
        for k in range(min(3, kl.rank)):
            e = np.zeros(kl.rank)
            e[k] = 1.0
            d = kl.local_displacement(e)
            fields[f"mode{k + 1}_norm"] = (
                lambda ip, u, v, d=d: np.linalg.norm(kl.space.evaluate_function(d, ip, u, v), axis=-1).reshape(np.shape(u))
            )
        self.out.vtk("reference_modes.vtk", self.surface, fields)
        return True

    def _interface_outputs(self, mean: InterfaceCauchyData, prefix):
        g = self.grid
        rows = [list(x) + [a.real, a.imag, b.real, b.imag] for x, a, b in zip(g.nodes, mean.u, mean.du)]
        self.out.csv(f"{prefix}_interface.csv", ["x", "y", "z", "re_u", "im_u", "re_dudn", "im_dudn"], rows)
        cu = g.interpolation_coefficients(mean.u)
        fields = {
            "re_u": lambda ip, u, v: g.interpolate(cu, ip, u, v).real.reshape(np.shape(u)),
            "im_u": lambda ip, u, v: g.interpolate(cu, ip, u, v).imag.reshape(np.shape(u)),
            "abs_u": lambda ip, u, v: np.abs(g.interpolate(cu, ip, u, v)).reshape(np.shape(u)),
        }
        self.out.vtk(f"{prefix}_interface.vtk", g.surface, fields)

    def mode_forward(self, second):
        self.setup_forward()
        with self.stage("estimate"):
            est = ml_estimate(self.hierarchy, self.model, mean=True, second=second, evaluator=self.evaluator)
        mean = InterfaceCauchyData.from_vector(est.mean, self.grid.n_nodes)
        arrays = {"u": mean.u, "du": mean.du}
        for lev, c in enumerate(est.mean_contributions):
            arrays[f"contribution_{lev}"] = c
        meta = {"hierarchy": self.hierarchy.describe(), "n_nodes": self.grid.n_nodes}
        self.out.container("mean_cauchy.bin", "cauchy-mean", meta, arrays)
        self._interface_outputs(mean, "mean")
        X = checkpoint_points(self.cfg, self.surface)
        with self.stage("exterior"):
            um = eval_from_interface(mean, self.grid, self.ctx, X)
        self.out.csv("exterior_mean.csv", ["x", "y", "z", "re", "im"], _complex_rows(X, um))
        if second:
            sm = SecondMomentData(self.grid.size, est.second)
            self.out.container("second_moment.bin", "cauchy-second-moment", meta, {"matrix": sm.matrix})
            with self.stage("exterior"):
                cor = correlation_at(sm, self.grid, self.ctx, X, X)
            var = cor.real - np.abs(um) ** 2
            rows = [list(x) + [m.real, m.imag, v, abs(c.imag)] for x, m, v, c in zip(X, um, var, cor)]
            self.out.csv("exterior_variance.csv", ["x", "y", "z", "re_mean", "im_mean", "variance", "imag_residual"], rows)
            self.extra["min_variance"] = float(var.min())
        self.extra["evaluations"] = est.stats
        return True

    def mode_invert(self):
        cfg = self.cfg
        self.setup_forward()
        inv = cfg["inversion"]
        g = self.grid
        n = g.n_nodes
        if n % 2 == 0:
            raise ConfigError("inversion observes patch midpoints and needs an odd node count")
        centre = np.arange(g.n_patches) * n * n + (n // 2) * n + n // 2
        obs_points = g.nodes[centre]
        observe = lambda data: data.u[centre]  # noqa: E731
        ev = self.evaluator

        def forward(level, y):
            return observe(ev.evaluate([(level, y)])[0])

        rng = np.random.default_rng(cfg["seeds"]["truth"])
        y_star = rng.uniform(-1.0, 1.0, self.kl.rank)
        level = cfg["max_level"] if inv["level"] is None else inv["level"]
        with self.stage("observations"):
            setup = synthesize_observations(forward, y_star, level, inv["sigma_rel"], cfg["seeds"]["noise"], obs_points)
        u, v, ref_pts = surface_sample_points(self.surface, inv["points_per_patch"])
        kl = self.kl
        npp = len(u)

        def quantity(y):
            d = kl.local_displacement(y)
            return np.concatenate([kl.space.evaluate_function(d, ip, u, v) for ip in range(len(self.surface))])

        with self.stage("posterior"):
            post = ml_ratio_posterior(self.hierarchy, setup, None, quantity, ev, inv["squared"], observe=observe)
            post_y = ml_ratio_posterior(
                self.hierarchy, setup, None, lambda y: np.asarray(y)[:, None], ev, inv["squared"], observe=observe
            )
        truth = quantity(y_star)
        rep = posterior_surface_report(post, ref_pts)
        rows = []
        for i in range(len(ref_pts)):
            row = [i // npp] + [float(c) for k in ("reference", "prior_mean", "posterior_mean", "lower", "upper") for c in rep[k][i]]
            rows.append(row + list(ref_pts[i] + truth[i]))
        head = ["patch"] + [f"{n}_{c}" for n in ("ref", "prior", "post", "lo", "hi", "truth") for c in "xyz"]
        self.out.csv("posterior.csv", head, rows)
        self.out.csv(
            "observations.csv", ["x", "y", "z", "re_data", "im_data", "re_clean", "im_clean"],
            [list(p) + [d.real, d.imag, c.real, c.imag] for p, d, c in zip(obs_points, setup.delta, setup.clean)],
        )
        self.out.container(
            "posterior.bin", "posterior", {"log_Z": post.log_Z, "ess": post.ess, "setup": setup.manifest()},
            {"mean": post.mean, "second": post.second, "variance": post.variance, "mean_y": post_y.mean[:, 0]},
        )
        self.out.vtk("prior_mean.vtk", self.surface)
        self.out.vtk("posterior_mean.vtk", deform_surface(kl, np.clip(post_y.mean[:, 0], -1, 1), validate=False))
        self.out.vtk("truth.vtk", deform_surface(kl, y_star, validate=False))
        err_post = float(np.linalg.norm(post.mean - truth))
        err_prior = float(np.linalg.norm(truth))
        self.extra["inversion"] = {
            **setup.manifest(),
            "log_Z": post.log_Z,
            "ess": post.ess,
            "posterior_mean_error": err_post,
            "prior_mean_error": err_prior,
        }
        self.log(f"posterior mean error {err_post:.4e} (prior {err_prior:.4e}), log Z {post.log_Z:.4f}")
        return True

    def mode_verify(self):
        cfg = self.cfg
        vc = cfg["verify"]
        ctx = build_context(cfg)
        surface = sphere()
        rng = np.random.default_rng(cfg["checkpoints"]["seed"])
        v = rng.standard_normal((vc["count"], 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        X = vc["radius"] * v
        ref_u, ref_du = sound_soft_sphere(X, ctx.kappa, 1.0, ctx.d, normals=v)
        rows, errs = [], []
        for lev in range(cfg["max_level"] + 1):
            with self.stage(f"verify_level_{lev}"):
                dens = solve(surface, ctx, cfg["degree"], lev)
                u = eval_potential(dens, X)
                du = eval_potential_normal_derivative(dens, X, v)
            eu = float(np.abs(u - ref_u).max() / np.abs(ref_u).max())
            ed = float(np.abs(du - ref_du).max() / np.abs(ref_du).max())
            errs.append(eu)
            rows.append([lev, dens.space.ndofs, eu, ed])
        monotone = all(b < a for a, b in zip(errs, errs[1:]))
        ok = errs[-1] <= vc["tol"] and monotone
        self.out.csv("verify.csv", ["level", "dofs", "rel_err_u", "rel_err_dudn"], rows)
        lines = [f"{'level':>5} {'dofs':>6} {'err u_s':>11} {'err du_s/dn':>11}  status"]
        for lev, nd, eu, ed in rows:
            status = "pass" if eu <= vc["tol"] else "-"
            lines.append(f"{lev:>5} {nd:>6} {eu:>11.3e} {ed:>11.3e}  {status}")
        lines.append(f"Mie check (tol {vc['tol']:.1e}, monotone decay): {'PASS' if ok else 'FAIL'}")
        print("\n".join(lines))
        self.extra["verify"] = {"errors": errs, "monotone": monotone, "pass": ok}
        return ok


def manifest(run: Run, mode, cfg, status):
    stats = dict(run.cache.stats())
    m = {
        "mode": mode,
        "status": status,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {
            "igauq": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "backend": kernels.BACKEND,
        },
        "threads": run.threads,
        "timings": run.timings,
        "cache": stats,
        "outputs": dict(sorted(run.out.files.items())),
        **run.extra,
    }
    try:
        import scipy

        m["versions"]["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover
        pass
    return m


def run(cfg, mode, out_dir, threads=1, log=None):
    """Execute ``mode`` with a resolved config; returns ``(ok, manifest)``."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    r = Run(cfg, out_dir, threads, log)
    if mode == "kl":
        ok = r.mode_kl()
    elif mode == "forward-mean":
        ok = r.mode_forward(second=False)
    elif mode == "forward-variance":
        ok = r.mode_forward(second=True)
    elif mode == "invert":
        ok = r.mode_invert()
    else:
        ok = r.mode_verify()
    m = manifest(r, mode, cfg, "ok" if ok else "failed")
    atomic_write_bytes(os.path.join(out_dir, "manifest.json"), (json.dumps(m, indent=2, sort_keys=True, default=float) + "\n").encode())
    return ok, m


def _error(category, exc, code, **extra):
    payload = {"error": category, "message": str(exc), **extra}
    sys.stderr.write(json.dumps(payload, default=str) + "\n")
    return code


def parser():
    p = argparse.ArgumentParser(prog="igauq", description="Shape uncertainty quantification for acoustic scattering")
    p.add_argument("--config", help="JSON run configuration (defaults are used for missing keys)")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--threads", type=int, default=1, help="worker processes for sample evaluation")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed-override", action="append", default=[], metavar="K=V", help="override a named seed")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass
    try:
        raw = load(args.config) if args.config else {}
        raw = apply_seed_overrides(raw, args.seed_override)
        if args.out:
            raw["output"] = args.out
        cfg = resolve(raw)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        ok, _ = run(cfg, args.mode, cfg["output"], args.threads, log=lambda m: print(m, file=sys.stderr))
        if not ok:
            return _error("verification-failed", "check failed; see output table", EXIT_OTHER)
        return EXIT_OK
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except CacheCorruption as exc:
        return _error("cache-corruption", exc, EXIT_CACHE)
    except SampleRejected as exc:
        y = None if exc.y is None else [float(v) for v in exc.y]
        return _error("sample-rejected", exc, EXIT_REJECTED, level=exc.level, y=y)
    except EstimatorFailure as exc:
        return _error("estimator-failure", exc, EXIT_ESTIMATOR, diagnostics=exc.diagnostics)
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        return _error(type(exc).__name__, exc, EXIT_OTHER)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
