"""Command-line entry point: ``dwg reconstruct | gwn | corrupt | eval | fixture | report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import DegenerateBoundsError, DwgError, EmptyInputError, EmptyLevelSetError, ParseError

log = logging.getLogger("dwg")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 1, 2


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _reconstruct(args) -> int:
    from .diffusion import DwgConfig, run_dwg
    from .io import read_point_cloud, write_mesh, write_oriented_points
    from .report import write_report

    cloud = read_point_cloud(args.input)
    cfg = DwgConfig(depth=args.depth, lam=args.lam, init_mode=args.init, area_mode=args.area,
                    seed=args.seed, max_iterations=args.max_iters, epsilon_deg=args.eps_deg,
                    threads=args.threads,
                    **({} if args.dilation is None else {"dilation": args.dilation}))
    res = run_dwg(cloud, cfg)
    write_mesh(res.mesh, args.output)
    if args.normals_out:
        write_oriented_points(res.cloud, args.normals_out)
    if args.diagnostics:
        out = write_report(res.history, Path(args.diagnostics).with_suffix(""), cfg.epsilon_deg)
        log.info("diagnostics: %s", ", ".join(str(p) for p in out.values()))
    print(f"iterations={res.iterations} converged={str(res.converged).lower()} "
          f"faces={res.mesh.n_faces} vertices={len(res.mesh.vertices)} flipped={str(res.flipped).lower()}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _gwn(args) -> int:
    from .io import read_points
    from .winding import probe_field
    from .core import PointCloud

    pts, nrm = read_points(args.cloud)
    if nrm is None:
        raise ParseError(f"{args.cloud}: the field probe needs oriented normals")
    q, _ = read_points(args.query)
    vals = probe_field(PointCloud.from_points(pts, nrm), q, args.lam, args.brute, args.area,
                       threads=args.threads)
    with open(args.output, "w") as fh:
        fh.write("x,y,z,w\n")
        for (x, y, z), w in zip(q, vals):
            fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r},{float(w)!r}\n")
    return EXIT_OK


def _corrupt(args) -> int:
    from .io import read_points, write_point_cloud
    from .metrics import corrupt
    from .core import PointCloud

    pts, nrm = read_points(args.input)
    out = corrupt(PointCloud.from_points(pts, nrm), args.noise, args.outliers, args.seed)
    write_point_cloud(out.points, args.output, out.normals if nrm is not None else None)
    return EXIT_OK


def _parse_reference(ref: str):
    if not ref.startswith("analytic:"):
        return None
    parts = ref.split(":")
    try:
        if parts[1] == "sphere" and len(parts) == 3:
            return "sphere", {"radius": float(parts[2])}
        if parts[1] == "torus" and len(parts) == 4:
            return "torus", {"R": float(parts[2]), "r": float(parts[3])}
    except ValueError:
        pass
    raise ParseError(f"bad analytic reference {ref!r}; use analytic:sphere:R or analytic:torus:R:r")


def _eval(args) -> int:
    from .io import read_mesh, read_points
    from .metrics import chamfer, chamfer_to_shape, sample_mesh

    mesh = read_mesh(args.mesh)
    if mesh.n_faces == 0:
        raise EmptyInputError(f"{args.mesh}: mesh has no faces")
    shape = _parse_reference(args.reference)
    if shape is not None:
        cd = chamfer_to_shape(mesh, shape[0], args.samples, args.seed, **shape[1])
    else:
        ref = read_mesh(args.reference) if args.reference.lower().endswith((".ply", ".obj")) else None
        if ref is not None and ref.n_faces:
            ref_pts = sample_mesh(ref, args.samples, args.seed + 1)
        else:
            ref_pts, _ = read_points(args.reference)
        cd = chamfer(sample_mesh(mesh, args.samples, args.seed), ref_pts)
    print(f"chamfer={cd:.9g} chamfer_x1e3={cd * 1e3:.6f}")
    return EXIT_OK


def _fixture(args) -> int:
    from .fixtures import sample_sphere, sample_thin_plate, sample_torus
    from .io import write_point_cloud

    if args.shape == "sphere":
        c = sample_sphere(args.n, args.radius, args.seed)
    elif args.shape == "torus":
        c = sample_torus(args.n, args.major, args.minor, args.seed)
    else:
        c = sample_thin_plate(args.n, args.width, args.height, args.thickness, args.seed)
    write_point_cloud(c.points, args.output, None if args.no_normals else c.normals)
    return EXIT_OK


def _report(args) -> int:
    from .report import plot_convergence, read_diagnostics, write_csv

    recs = read_diagnostics(args.diagnostics)
    stem = Path(args.output) if args.output else Path(args.diagnostics).with_suffix("")
    write_csv(recs, stem.with_suffix(".csv"))
    plot_convergence(recs, stem.with_suffix(".png"), args.eps_deg)
    print(f"wrote {stem.with_suffix('.csv')} {stem.with_suffix('.png')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dwg", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconstruct", help="orient normals and extract a mesh")
    r.add_argument("input")
    r.add_argument("-o", "--output", required=True, help="mesh (.ply or .obj)")
    r.add_argument("--normals-out", help="oriented points PLY for screened Poisson tools")
    r.add_argument("--depth", type=_positive_int, default=8)
    r.add_argument("--lambda", dest="lam", type=float, default=10.0,
                   help="screening coefficient; 10 for clean input, 100 for noisy")
    r.add_argument("--init", choices=("random", "pca", "gauss"), default="random")
    r.add_argument("--area", choices=("uniform", "voronoi"), default="uniform")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-iters", type=_positive_int, default=200)
    r.add_argument("--eps-deg", type=float, default=0.1)
    r.add_argument("--dilation", type=int, default=None, help="active-cell dilation radius")
    r.add_argument("--threads", type=_positive_int)
    r.add_argument("--diagnostics", help="per-iteration JSONL; CSV and PNG are written beside it")
    r.set_defaults(func=_reconstruct)

    g = sub.add_parser("gwn", help="evaluate the screened winding number of an oriented cloud")
    g.add_argument("cloud")
    g.add_argument("--query", required=True)
    g.add_argument("--lambda", dest="lam", type=float, default=0.0)
    g.add_argument("--brute", action="store_true", help="direct summation instead of the octree")
    g.add_argument("--area", choices=("uniform", "voronoi"), default="voronoi")
    g.add_argument("--threads", type=_positive_int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_gwn)

    c = sub.add_parser("corrupt", help="add Gaussian noise and uniform outliers")
    c.add_argument("input")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--noise", type=float, default=0.0, help="percent of the bbox diagonal")
    c.add_argument("--outliers", type=float, default=0.0, help="percent of the point count")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_corrupt)

    e = sub.add_parser("eval", help="Chamfer distance to a reference")
    e.add_argument("--mesh", required=True)
    e.add_argument("--reference", required=True,
                   help="mesh, point file, analytic:sphere:R or analytic:torus:R:r")
    e.add_argument("--samples", type=_positive_int, default=100_000)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_eval)

    f = sub.add_parser("fixture", help="sample a synthetic test shape")
    f.add_argument("shape", choices=("sphere", "torus", "plate"))
    f.add_argument("-n", type=_positive_int, default=10_000)
    f.add_argument("-o", "--output", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--radius", type=float, default=1.0)
    f.add_argument("--major", type=float, default=0.3)
    f.add_argument("--minor", type=float, default=0.12)
    f.add_argument("--width", type=float, default=1.0)
    f.add_argument("--height", type=float, default=1.0)
    f.add_argument("--thickness", type=float, default=0.02)
    f.add_argument("--no-normals", action="store_true")
    f.set_defaults(func=_fixture)

    rp = sub.add_parser("report", help="render CSV and a convergence plot from diagnostics")
    rp.add_argument("diagnostics")
    rp.add_argument("-o", "--output", help="output stem (default: next to the input)")
    rp.add_argument("--eps-deg", type=float, default=0.1)
    rp.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, EmptyInputError, DegenerateBoundsError, FileNotFoundError, ValueError) as exc:
        print(f"dwg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyLevelSetError as exc:
        print(f"dwg: reconstruction failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except DwgError as exc:
        print(f"dwg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
