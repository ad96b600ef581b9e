"""Command-line interface.

Every subcommand is a deterministic function of its flags and input files;
randomness only enters through ``--seed``. Outputs are written atomically and
CSV files start with ``# key=value`` provenance lines.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import ContractError, FormatError, OracleError
from .formats import (
    atomic_write,
    grid_csv,
    image_bytes,
    load_any_image,
    network_to_dict,
    read_image,
    read_network,
    render_grid,
    table_csv,
    write_gray_bytes,
    write_tensor,
)
from .conv import Network
from .oracle import ToyModelSpec, build_oracle, synthetic_batch
from .perturb import apply_perturbation, make_pattern, perturbation_spectrum, quantize_pattern
from .protocol import OracleServer, RemoteOracle, parse_endpoint, serve_stream
from .search import fool_heatmap, kernel_response_map, local_search, matched_kernel
from .spectra import full_spectrum

TOOL = f"fourier-uap {__version__}"


def _meta(seed="-", eps="-", n="-", oracle="-", **extra):
    meta = {"tool": TOOL, "seed": seed, "eps": eps, "n": n, "oracle": oracle}
    meta.update(extra)
    return meta


# -- oracle / data helpers -------------------------------------------------

def load_model_spec(path) -> ToyModelSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return ToyModelSpec.from_dict(doc)
    except TypeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def open_oracle(ref: str, timeout: float):
    """``tcp://host:port`` gives a remote oracle, anything else a toy spec file."""
    if ref.startswith("tcp://"):
        return RemoteOracle(ref, timeout=timeout), None
    spec = load_model_spec(ref)
    return build_oracle(spec), spec


def _resolve_geometry(args, spec):
    n, channels = args.n, args.channels
    if spec is not None:
        if n is not None and n != spec.n:
            raise ContractError(f"--n {n} does not match the model spec (n={spec.n})")
        if channels is not None and channels != spec.channels:
            raise ContractError(f"--channels {channels} does not match the model spec")
        n, channels = spec.n, spec.channels
    if n is None:
        raise ContractError("--n is required for remote oracles")
    return n, channels or 3


def load_batch(args, n, channels):
    if args.data:
        images = [load_any_image(p) for p in args.data]
        batch = np.stack(images)
        if batch.shape[1:] != (channels, n, n):
            raise ContractError(f"data images have shape {batch.shape[1:]}, expected {(channels, n, n)}")
        return batch
    return synthetic_batch(args.seed, n, channels, args.batch, generator=args.generator,
                           num_classes=args.data_classes)


# -- subcommands -----------------------------------------------------------

def cmd_spectra(args):
    net = read_network(args.network)
    with open(args.network, encoding="utf-8") as fh:
        seed = json.load(fh).get("seed")
    pairs = full_spectrum(net, args.n)
    if args.top is not None:
        pairs = pairs[:args.top]
    rows = ((float(s), f.i, f.j) for s, f in pairs)
    meta = _meta(seed="-" if seed is None else seed, n=args.n, network=args.network)
    atomic_write(args.out, table_csv(("sigma", "i", "j"), rows, meta))
    return 0


def cmd_sfa(args):
    p = make_pattern(args.n, (args.i, args.j), args.eps, args.signed)
    write_tensor(args.out, p.pattern[None])
    if args.png_like:
        write_gray_bytes(args.png_like, quantize_pattern(p))
    return 0


def cmd_attack(args):
    x = read_image(args.image)
    c, h, w = x.shape
    if h != w:
        raise ContractError(f"attack needs a square image, got {h}x{w}")
    p = make_pattern(h, (args.i, args.j), args.eps, args.signed)
    atomic_write(args.out, image_bytes(apply_perturbation(x, p)))
    return 0


def cmd_heatmap(args):
    oracle, spec = open_oracle(args.oracle, args.timeout)
    n, channels = _resolve_geometry(args, spec)
    batch = load_batch(args, n, channels)
    hm = fool_heatmap(oracle, batch, args.eps, signed=args.signed, seed=args.seed)
    meta = _meta(args.seed, args.eps, n, oracle.descriptor, batch=len(batch),
                 signed=int(args.signed), data=("files" if args.data else args.generator),
                 queries=oracle.query_count)
    atomic_write(args.out, grid_csv(hm.values, meta, "fool_ratio"))
    if args.render:
        render_grid(args.render, hm.values, vmax=1.0, centered=args.centered)
    best, ratio = hm.argmax()
    print(f"max {best.i} {best.j} {ratio!r}")
    return 0


def cmd_search(args):
    oracle, spec = open_oracle(args.oracle, args.timeout)
    n, channels = _resolve_geometry(args, spec)
    batch = load_batch(args, n, channels)
    res = local_search(oracle, batch, args.eps, args.budget, args.seed, signed=args.signed)
    print(f"frequency {res.freq.i} {res.freq.j}")
    print(f"fool_ratio {res.fool_ratio!r}")
    print(f"queries {res.queries}")
    print(f"evaluations {res.evaluations}")
    return 0


def cmd_analyze(args):
    x = load_any_image(args.image)
    if x.shape[-1] != x.shape[-2]:
        raise ContractError(f"spectrum analysis needs square images, got {x.shape[-2:]}")
    spec = perturbation_spectrum(x, centered=args.centered)
    c, n, _ = spec.shape
    rows = ((ch, i, j, float(spec[ch, i, j])) for ch in range(c) for i in range(n) for j in range(n))
    meta = _meta(n=n, source=args.image, layout="centered" if args.centered else "corner")
    atomic_write(args.out, table_csv(("channel", "i", "j", "log_magnitude"), rows, meta))
    if args.render:
        render_grid(args.render, spec.mean(axis=0))
    return 0


def _kernel_ref(ref: str):
    path, sep, idx = ref.rpartition(":")
    if sep and idx.isdigit():
        return path, int(idx)
    return ref, 0


def cmd_respond(args):
    path, idx = _kernel_ref(args.kernel)
    net = read_network(path)
    if not 0 <= idx < len(net.layers):
        raise ContractError(f"{path} has {len(net.layers)} layers, no layer {idx}")
    rmap = kernel_response_map(net.layers[idx], args.n, name=f"{path}:{idx}")
    atomic_write(args.out, grid_csv(rmap.values, _meta(n=args.n, kernel=rmap.kernel), "response"))
    if args.render:
        render_grid(args.render, rmap.values, centered=args.centered)
    return 0


def cmd_matched(args):
    layer = matched_kernel((args.i, args.j), args.k, args.n)
    doc = network_to_dict(Network((layer,)))
    text = json.dumps(doc, indent=1) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_oracle_serve(args):
    oracle = build_oracle(load_model_spec(args.spec))
    if args.listen == "stdio":
        serve_stream(oracle, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    host, port = parse_endpoint(args.listen)
    server = OracleServer((host, port), oracle)
    print(f"listening {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- parser ----------------------------------------------------------------

def _oracle_args(p):
    p.add_argument("--oracle", required=True, help="toy model spec JSON or tcp://host:port")
    p.add_argument("--n", type=int, help="image size (taken from the spec for toy models)")
    p.add_argument("--channels", type=int, help="image channels (default 3)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--batch", type=int, default=64, help="synthetic batch size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signed", action="store_true", help="use the signed (SSFA) pattern")
    p.add_argument("--generator", default="uniform",
                   choices=("uniform", "gaussian-mixture-classes"))
    p.add_argument("--data-classes", type=int, default=2,
                   help="mixture components for gaussian-mixture-classes")
    p.add_argument("--data", nargs="+", metavar="FILE",
                   help="use these images (PPM/PGM/CSPT) instead of synthetic data")
    p.add_argument("--timeout", type=float, default=30.0, help="remote oracle timeout (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourier-uap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectra", help="singular values of a network file")
    p.add_argument("network")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--top", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("sfa", help="emit a single Fourier attack pattern")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--out", required=True, help="CSPT tensor (1, n, n)")
    p.add_argument("--png-like", help="also write an 8-bit PGM rendering")
    p.set_defaults(func=cmd_sfa)

    p = sub.add_parser("attack", help="perturb one image")
    p.add_argument("--image", required=True)
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("heatmap", help="fool-ratio heatmap over all frequencies")
    _oracle_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--render", help="PGM rendering (fool ratio 0..1 -> 0..255)")
    p.add_argument("--centered", action="store_true", help="fftshift the rendering")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("search", help="budgeted local frequency search")
    _oracle_args(p)
    p.add_argument("--budget", type=int, required=True, help="distinct frequency evaluations")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("analyze", help="log-magnitude spectrum of a supplied perturbation")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render")
    p.add_argument("--centered", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("respond", help="kernel response map")
    p.add_argument("--kernel", required=True, help="network.json or network.json:LAYER")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render")
    p.add_argument("--centered", action="store_true")
    p.set_defaults(func=cmd_respond)

    p = sub.add_parser("matched", help="matched k x k kernel for one frequency")
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", help="network JSON (stdout if omitted)")
    p.set_defaults(func=cmd_matched)

    p = sub.add_parser("oracle-serve", help="serve a toy model over the wire protocol")
    p.add_argument("--spec", required=True)
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port or stdio")
    p.set_defaults(func=cmd_oracle_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
