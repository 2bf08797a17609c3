"""Scratch calibration: check builtin tables against published values."""
import sys
sys.path.insert(0, "src")
from dataclasses import dataclass

from peflow.workload import builtin_network, count_macs
from peflow import perfmodel as pm


@dataclass
class Cfg:
    rows: int = 7
    cores: int = 96


cfg = Cfg()

for name in ("alexnet", "vgg16", "resnet50"):
    net = builtin_network(name)
    conv = net.conv_layers
    fcl = net.fc_layers
    v_conv = sum(count_macs(l).macs_valid for l in conv)
    z_conv = sum(count_macs(l).macs_with_zpad for l in conv)
    v_fc = sum(count_macs(l).macs_valid for l in fcl) // 7  # per frame
    np_ = pm.network_perf(net, cfg, 400e6, 200e6)
    c, f = np_.conv, np_.fc
    print(f"== {name}")
    print(f"  conv valid {v_conv/1e9:.4f} G   wzp {z_conv/1e9:.4f} G   fc/frame {v_fc/1e6:.2f} M")
    print(f"  conv: E={c.efficiency*100:.2f}%  fps={c.fps:.2f}  lat={c.latency_s*1e3:.2f}ms"
          f"  M={c.total_words/1e6:.3f}M  AI={c.arith_intensity:.2f}  Q={c.clocks}")
    print(f"  fc:   E={f.efficiency*100:.2f}%  fps={f.fps:.1f}  lat={f.latency_s*1e3:.2f}ms"
          f"  M/frame={f.total_words/7/1e6:.3f}M  AI={f.arith_intensity:.2f}  Q={f.clocks}")
    # paper-style fc accounting: batch factor on the input/output streams
    mam = 0
    for l in fcl:
        mx, mk, my = pm.memory_accesses(l, cfg)
        mam += l.h * (mx + my) + mk
    ai_rep = 2 * sum(count_macs(l).macs_valid for l in fcl) / mam
    print(f"  fc reported: MAM/frame={mam/7/1e6:.2f}M  AI={ai_rep:.2f}")

# bandwidth peaks
peak_conv, peak_fc, argmax = 0, 0, None
for name in ("alexnet", "vgg16", "resnet50"):
    net = builtin_network(name)
    for l in net.layers:
        bw = sum(pm.bandwidth(l, cfg, 1.0))
        if l.is_conv and bw > peak_conv:
            peak_conv, argmax = bw, (name, l.name)
        if not l.is_conv:
            peak_fc = max(peak_fc, bw)
print(f"peak conv bytes/clock = {peak_conv:.3f} at {argmax};  fc = {peak_fc:.3f}")
print(f"peak gops = {pm.peak_gops(cfg, 400e6):.1f}")

# ResNet first layer efficiencies
rn = builtin_network("resnet50")
first = rn.layers[0]
print(f"resnet conv1 E@7x96 = {pm.efficiency(first, Cfg(7, 96))*100:.2f}  "
      f"@7x24 = {pm.efficiency(first, Cfg(7, 24))*100:.2f}")

# 7x24 vs 7x96 on resnet conv
for c_ in (Cfg(7, 24), Cfg(7, 96), Cfg(7, 15), Cfg(14, 24)):
    convs = rn.conv_layers
    q = sum(pm.clocks(l, c_) for l in convs)
    e = sum(count_macs(l).macs_valid for l in convs) / (c_.rows * c_.cores * q)
    print(f"  resnet conv E@{c_.rows}x{c_.cores} = {e*100:.2f}")
