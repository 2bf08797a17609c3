"""Command-line front end.

Commands:
  model     closed-form per-layer and aggregate performance report
  simulate  cycle-level run with oracle comparison per layer
  dse       sweep static (R, C) configurations and print the Pareto front
  verify    seeded cross-check suite (simulator vs formulas vs oracle)
  goldens   compare the built-in CNN metrics against published values

Network files are line oriented: an optional `network NAME` line, then
one layer per line: `kind N H W Ci Co Kh Kw Sh Sw [padh padw]` where
kind is conv|fc|matmul; padding defaults to (K-1)/2 for conv and 0
otherwise; `#` starts a comment.  Flags mirror PEFLOW_* environment
variables.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import dse as dse_mod
from . import perfmodel as pm
from .engine import EngineConfig, simulate_layer
from .oracle import conv_reference, fc_reference, random_input, random_weights
from .tiling import (UnmappableLayerError, derive_params, out_col_beats,
                     tile_input, untile_input)
from .workload import (LayerDescriptor, LayerKind, Network, ShapeError,
                       builtin_names, builtin_network, count_macs)

_ENV = "PEFLOW_"


def _env(name, default):
    return os.environ.get(_ENV + name, default)


# ---------------------------------------------------------------------------
# network files
# ---------------------------------------------------------------------------

_KINDS = {"conv": LayerKind.CONV, "fc": LayerKind.FULLY_CONNECTED,
          "matmul": LayerKind.MATMUL}


def read_network_file(path) -> Network:
    name = os.path.splitext(os.path.basename(path))[0]
    layers = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "network":
                if len(parts) != 2:
                    raise ShapeError(f"{path}:{lineno}: bad network line")
                name = parts[1]
                continue
            if parts[0] not in _KINDS:
                raise ShapeError(f"{path}:{lineno}: unknown kind '{parts[0]}'")
            nums = [int(p) for p in parts[1:]]
            if len(nums) not in (9, 11):
                raise ShapeError(f"{path}:{lineno}: expected 9 or 11 shape "
                                 f"fields, got {len(nums)}")
            kind = _KINDS[parts[0]]
            n, h, w, ci, co, kh, kw, sh, sw = nums[:9]
            if len(nums) == 11:
                pad_h, pad_w = nums[9:]
            elif kind is LayerKind.CONV:
                pad_h, pad_w = (kh - 1) // 2, (kw - 1) // 2
            else:
                pad_h = pad_w = 0
            layers.append(LayerDescriptor(
                kind, n, h, w, ci, co, kh, kw, sh, sw, pad_h, pad_w,
                name=f"layer{len(layers) + 1}"))
    return Network(name, tuple(layers))


def write_network_file(net: Network, fh):
    fh.write(f"network {net.name}\n")
    for l in net.layers:
        kind = {LayerKind.CONV: "conv", LayerKind.FULLY_CONNECTED: "fc",
                LayerKind.MATMUL: "matmul"}[l.kind]
        fh.write(f"{kind} {l.n} {l.h} {l.w} {l.ci} {l.co} "
                 f"{l.kh} {l.kw} {l.sh} {l.sw} {l.pad_h} {l.pad_w}\n")


def _resolve_network(args) -> Network:
    if args.file:
        return read_network_file(args.file)
    if not args.network:
        raise SystemExit("error: give a built-in network name or --file")
    return builtin_network(args.network, fc_batch=args.fc_batch)


# ---------------------------------------------------------------------------
# emission helpers: identical RunSpec => byte-identical output
# ---------------------------------------------------------------------------

class Emitter:
    def __init__(self, fmt, out):
        self.fmt = fmt
        self.out = out

    def table(self, header, rows, title=None):
        if self.fmt == "delimited":
            self.out.write(",".join(header) + "\n")
            for r in rows:
                self.out.write(",".join(str(c) for c in r) + "\n")
        elif self.fmt == "structured":
            for r in rows:
                pairs = " ".join(f"{h}={c}" for h, c in zip(header, r))
                self.out.write(pairs + "\n")
        else:
            if title:
                self.out.write(f"# {title}\n")
            widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows
                      else len(str(h)) for i, h in enumerate(header)]
            self.out.write("  ".join(h.ljust(w) for h, w in
                                     zip(header, widths)).rstrip() + "\n")
            for r in rows:
                self.out.write("  ".join(str(c).ljust(w) for c, w in
                                         zip(r, widths)).rstrip() + "\n")

    def line(self, text=""):
        self.out.write(text + "\n")


def _fmt(x, nd=3):
    return f"{x:.{nd}f}"


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def cmd_model(args) -> int:
    net = _resolve_network(args)
    cfg = EngineConfig(rows=args.R, cores=args.C)
    em = Emitter(args.format, sys.stdout)
    rows = []
    bad = []
    perfs = []
    for layer in net.layers:
        f = args.f_conv if layer.is_conv else args.f_fc
        try:
            p = pm.layer_perf(layer, cfg, f)
        except UnmappableLayerError as exc:
            bad.append((layer.name, str(exc)))
            continue
        perfs.append(p)
        rows.append((layer.name, layer.kind.value, p.clocks,
                     _fmt(100 * p.efficiency, 2), p.mx_words, p.mk_words,
                     p.my_words, p.total_words, _fmt(p.arith_intensity, 2),
                     _fmt(p.bw_x / f, 3), _fmt(p.bw_k / f, 3),
                     _fmt(p.bw_y / f, 3)))
    em.table(("layer", "kind", "clocks", "eff_pct", "x_words", "k_words",
              "y_words", "total_words", "ai", "bwx_wpc", "bwk_wpc",
              "bwy_wpc"), rows, title=f"{net.name} at {args.R}x{args.C}")
    if perfs:
        np_ = [l for l in net.layers
               if not any(l.name == b[0] for b in bad)]
        perf = pm.network_perf(Network(net.name, tuple(np_)), cfg,
                               args.f_conv, args.f_fc)
        for tag, dom in (("conv", perf.conv), ("fc", perf.fc)):
            if dom is None:
                continue
            em.line(f"{tag}: clocks={dom.clocks} eff_pct="
                    f"{_fmt(100 * dom.efficiency, 2)} words={dom.total_words}"
                    f" ai={_fmt(dom.arith_intensity, 2)}"
                    f" fps={_fmt(dom.fps, 2)}"
                    f" latency_ms={_fmt(dom.latency_s * 1e3, 3)}")
        em.line(f"overall: eff_pct={_fmt(100 * perf.overall_efficiency, 2)}"
                f" peak_gops={_fmt(pm.peak_gops(cfg, args.f_conv), 1)}")
    for name, why in bad:
        em.line(f"unmappable: {name}: {why}")
    return 1 if bad else 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    net = _resolve_network(args)
    cfg = EngineConfig(rows=args.R, cores=args.C)
    em = Emitter(args.format, sys.stdout)
    rng = np.random.default_rng(args.seed)
    estimate = 0
    for layer in net.layers:
        estimate += pm.clocks(layer, cfg)
    if estimate > args.cap_cycles:
        em.line(f"refused: estimated {estimate} cycles exceeds cap "
                f"{args.cap_cycles}")
        return 1
    status = 0
    rows = []
    for layer in net.layers:
        x = random_input(layer, rng)
        k = random_weights(layer, rng)
        trace = sys.stdout if args.trace else None
        if trace:
            em.line(f"# trace {layer.name}: cycle,phase,t,n,l,w,ci,kh,released")
        rep = simulate_layer(x, k, layer, cfg, trace=trace)
        ref = conv_reference(x, k, layer) if layer.is_conv \
            else fc_reference(x, k)
        if np.array_equal(rep.output, ref):
            verdict = "MATCH"
        else:
            diff = np.argwhere(rep.output != ref)[0]
            verdict = f"MISMATCH@{tuple(int(i) for i in diff)}"
            status = 1
        rows.append((layer.name, rep.cycles, rep.mem_beats.x_beats,
                     rep.mem_beats.k_beats, rep.mem_beats.y_beats,
                     rep.valid_macs, rep.drain_overruns, f"oracle: {verdict}"))
    em.table(("layer", "cycles", "x_beats", "k_beats", "y_beats",
              "valid_macs", "drain_overruns", "verdict"), rows,
             title=f"simulate {net.name} at {args.R}x{args.C} seed={args.seed}")
    return status


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def random_layer(rng) -> LayerDescriptor:
    """One random conv layer from the fuzz distribution."""
    k = int(rng.choice([1, 3, 5, 7, 11]))
    s = int(rng.choice([1, 2, 4]))
    ci = int(rng.integers(1, 17))
    co = int(rng.integers(1, 33))
    h = int(rng.integers(k, 25))
    w = int(rng.integers(k, 25))
    pad = (k - 1) // 2
    if rng.integers(0, 4) == 0:
        pad = int(rng.integers(0, pad + 1))
    return LayerDescriptor(LayerKind.CONV, 1, h, w, ci, co, k, k, s, s,
                           pad, pad, name=f"fuzz_k{k}s{s}")


def verify_corpus(count, seed, configs=((4, 6), (7, 24)), sabotage=""):
    """Cross checks over a seeded random corpus.

    Returns (checks_passed, failures:list).  Each case runs the
    simulator against the reference evaluation, the closed-form clock
    and word counts against measured ones, and the input restructuring
    round trip.
    """
    rng = np.random.default_rng(seed)
    failures = []
    passed = 0
    done = 0
    guard = 0
    while done < count and guard < 50 * max(count, 1):
        guard += 1
        layer = random_layer(rng)
        cfg = EngineConfig(*configs[done % len(configs)])
        if layer.kw + layer.sw - 1 > cfg.cores:
            continue
        x = random_input(layer, rng)
        k = random_weights(layer, rng)
        rep = simulate_layer(x, k, layer, cfg)
        ref = conv_reference(x, k, layer)

        def check(label, ok):
            nonlocal passed
            if ok:
                passed += 1
            else:
                failures.append(f"{layer.name}@{cfg.rows}x{cfg.cores}: {label}")

        check("sim-vs-oracle", np.array_equal(rep.output, ref))
        q = pm.clocks(layer, cfg) + (1 if sabotage == "qj" else 0)
        check("sim-vs-clocks", rep.cycles == q)
        mx, mk, my = pm.memory_accesses(layer, cfg)
        p = derive_params(layer, cfg)
        check("x-words", rep.mem_beats.x_beats * (cfg.rows + p.shift_factor) == mx)
        check("k-words", rep.mem_beats.k_beats * cfg.cores == mk)
        check("y-words", rep.mem_beats.y_beats
              * p.num_groups * layer.sw * cfg.rows == my)
        xhat = tile_input(x, layer, cfg)
        check("tile-round-trip",
              np.array_equal(untile_input(xhat, layer, cfg), x))
        check("valid-macs", rep.valid_macs == count_macs(layer).macs_valid)
        done += 1
    return passed, failures, done


def cmd_verify(args) -> int:
    em = Emitter(args.format, sys.stdout)
    sabotage = os.environ.get(_ENV + "VERIFY_SABOTAGE", "")
    if args.count == 0:
        em.line("verify: corpus size 0, vacuous pass (warning)")
        return 0
    configs = ((4, 6), (7, 24)) if args.R is None \
        else ((args.R, args.C or 96),)
    passed, failures, cases = verify_corpus(args.count, args.seed,
                                            configs=configs,
                                            sabotage=sabotage)
    for f in failures:
        em.line(f"FAIL {f}")
    em.line(f"verify: {cases} cases, {passed} checks passed, "
            f"{len(failures)} failed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# goldens
# ---------------------------------------------------------------------------

# Published reference values at 7x96, 400 MHz conv / 200 MHz fc, batch 7.
# Tuples are (value, unit-in-last-place as printed).
_GOLDEN = {
    "alexnet": {
        "conv": {"eff_pct": (77.2, 0.1), "fps": (336.6, 0.1),
                 "latency_ms": (3.0, 0.1), "mwords": (6.4, 0.1),
                 "ai": (191.8, 0.1)},
        "fc": {"eff_pct": (99.1, 0.1), "fps": (2400, 100),
               "latency_ms": (2.9, 0.1), "mwords": (12.2, 0.1),
               "ai": (9.1, 0.1)},
    },
    "vgg16": {
        "conv": {"eff_pct": (96.5, 0.1), "fps": (17.5, 0.1),
                 "latency_ms": (57.2, 0.1), "mwords": (96.8, 0.1),
                 "ai": (306.8, 0.1)},
        "fc": {"eff_pct": (99.1, 0.1), "fps": (1100, 100),
               "latency_ms": (6.5, 0.1), "mwords": (27.0, 0.1),
               "ai": (9.2, 0.1)},
    },
    "resnet50": {
        "conv": {"eff_pct": (88.3, 0.1), "fps": (64.2, 0.1),
                 "latency_ms": (15.6, 0.1), "mwords": (67.9, 0.1),
                 "ai": (108.9, 0.1)},
        "fc": {"eff_pct": (94.7, 0.1), "fps": (62100, 100),
               "latency_ms": (0.1, 0.1), "mwords": (0.5, 0.1),
               "ai": (8.6, 0.1)},
    },
}
_GOLDEN_PEAK_GOPS = 537.6
_GOLDEN_BW_CONV = 26    # bytes/clock, attained at vgg16 layer 1
_GOLDEN_BW_FC = 104


def _within(computed, published, ulp, pct=0.005):
    """Published numbers are rounded to their last printed digit."""
    return abs(computed - published) <= pct * abs(published) + 0.5 * ulp


def fc_reported_words(layers, cfg):
    """Fully-connected stream words under the published accounting, which
    scales the input and output streams by the batch once more than the
    physical beat count does."""
    total = 0
    for l in layers:
        mx, mk, my = pm.memory_accesses(l, cfg)
        total += l.h * (mx + my) + mk
    return total


def golden_rows(fc_batch=7, f_conv=400e6, f_fc=200e6):
    cfg = EngineConfig(rows=7, cores=96)
    rows = []
    peaks = {"conv": 0.0, "fc": 0.0}
    peak_layer = None
    for name in builtin_names():
        net = builtin_network(name, fc_batch=fc_batch)
        perf = pm.network_perf(net, cfg, f_conv, f_fc)
        for tag, dom in (("conv", perf.conv), ("fc", perf.fc)):
            layers = [l for l in net.layers if l.is_conv == (tag == "conv")]
            if tag == "fc":
                words = fc_reported_words(layers, cfg)
                frames = fc_batch
                macs = sum(count_macs(l).macs_valid for l in layers)
                ai = 2 * macs / words
            else:
                words = dom.total_words
                frames = 1
                ai = dom.arith_intensity
            computed = {
                "eff_pct": 100 * dom.efficiency,
                "fps": dom.fps,
                "latency_ms": dom.latency_s * 1e3,
                "mwords": words / frames / 1e6,
                "ai": ai,
            }
            for metric, value in computed.items():
                pub, ulp = _GOLDEN[name][tag][metric]
                ok = _within(value, pub, ulp)
                rows.append((name, tag, metric, _fmt(value, 3), pub,
                             "PASS" if ok else "FAIL"))
        for l in net.layers:
            wpc = sum(pm.bandwidth(l, cfg, 1.0))
            tag = "conv" if l.is_conv else "fc"
            if wpc > peaks[tag]:
                peaks[tag] = wpc
                if tag == "conv":
                    peak_layer = (name, l.name)
    rows.append(("all", "conv", "peak_bytes_per_clock",
                 str(math.ceil(peaks["conv"])), _GOLDEN_BW_CONV,
                 "PASS" if math.ceil(peaks["conv"]) == _GOLDEN_BW_CONV
                 else "FAIL"))
    rows.append(("all", "fc", "peak_bytes_per_clock",
                 str(math.ceil(peaks["fc"])), _GOLDEN_BW_FC,
                 "PASS" if math.ceil(peaks["fc"]) == _GOLDEN_BW_FC
                 else "FAIL"))
    gops = pm.peak_gops(cfg, f_conv)
    rows.append(("all", "-", "peak_gops", _fmt(gops, 1), _GOLDEN_PEAK_GOPS,
                 "PASS" if gops == _GOLDEN_PEAK_GOPS else "FAIL"))
    return rows, peak_layer


def cmd_goldens(args) -> int:
    em = Emitter(args.format, sys.stdout)
    rows, peak_layer = golden_rows(fc_batch=args.fc_batch,
                                   f_conv=args.f_conv, f_fc=args.f_fc)
    em.table(("network", "domain", "metric", "computed", "published",
              "status"), rows,
             title="published-value comparison at 7x96, batch 7")
    em.line(f"peak conv bandwidth attained at {peak_layer[0]}/{peak_layer[1]}")
    return 0 if all(r[-1] == "PASS" for r in rows) else 1


# ---------------------------------------------------------------------------
# dse
# ---------------------------------------------------------------------------

def cmd_dse(args) -> int:
    nets = tuple(builtin_network(n, fc_batch=args.fc_batch)
                 for n in (args.networks or builtin_names()))
    query = dse_mod.DseQuery(nets, (args.r_min, args.r_max),
                             (args.c_min, args.c_max))
    points = dse_mod.sweep(query)
    em = Emitter(args.format, sys.stdout)
    rows = []
    for p in points if args.all_points else dse_mod.pareto(points):
        per_net = " ".join(f"{n}={_fmt(100 * e, 2)}"
                           for n, e in sorted(p.net_efficiency.items()))
        rows.append((p.rows, p.cores, int(p.feasible),
                     _fmt(100 * p.efficiency, 3) if p.feasible else "-",
                     p.total_words if p.feasible else "-", per_net))
    em.table(("R", "C", "feasible", "eff_pct", "total_words", "per_network"),
             rows, title="design-space sweep" if args.all_points
             else "pareto front (max eff, min words)")
    if not args.all_points:
        pick = dse_mod.choose(dse_mod.pareto(points))
        em.line(f"preferred: R={pick.rows} C={pick.cores} "
                f"eff_pct={_fmt(100 * pick.efficiency, 3)} "
                f"total_words={pick.total_words}")
    return 0


# ---------------------------------------------------------------------------
# entry
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--R", type=int, default=int(_env("R", 7)))
    sp.add_argument("--C", type=int, default=int(_env("C", 96)))
    sp.add_argument("--f-conv", dest="f_conv", type=float,
                    default=float(_env("F_CONV", 400e6)))
    sp.add_argument("--f-fc", dest="f_fc", type=float,
                    default=float(_env("F_FC", 200e6)))
    sp.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    sp.add_argument("--format", choices=("table", "delimited", "structured"),
                    default=_env("FORMAT", "table"))
    sp.add_argument("--file", default=_env("FILE", None))
    sp.add_argument("--fc-batch", dest="fc_batch", type=int,
                    default=int(_env("FC_BATCH", 7)))
    sp.add_argument("--trace", action="store_true",
                    default=_env("TRACE", "") not in ("", "0"))
    sp.add_argument("--cap-cycles", dest="cap_cycles", type=float,
                    default=float(_env("CAP_CYCLES", 1e9)))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="peflow", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("model", help="closed-form performance report")
    sp.add_argument("network", nargs="?", choices=builtin_names())
    _add_common(sp)
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("simulate", help="cycle-level simulation vs oracle")
    sp.add_argument("network", nargs="?", choices=builtin_names())
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="seeded cross-check suite")
    sp.add_argument("--count", type=int, default=int(_env("COUNT", 40)))
    _add_common(sp)
    sp.set_defaults(func=cmd_verify, R=None, C=None)

    sp = sub.add_parser("goldens", help="compare against published values")
    _add_common(sp)
    sp.set_defaults(func=cmd_goldens)

    sp = sub.add_parser("dse", help="design-space exploration sweep")
    sp.add_argument("--networks", nargs="*", choices=builtin_names())
    sp.add_argument("--r-min", type=int, default=1)
    sp.add_argument("--r-max", type=int, default=16)
    sp.add_argument("--c-min", type=int, default=8)
    sp.add_argument("--c-max", type=int, default=128)
    sp.add_argument("--all-points", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_dse)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
