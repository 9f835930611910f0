#!/usr/bin/env python3
"""Generate the synthetic urban drive cycle shipped in data/.

Stop-and-go micro-trips with smooth (cosine-ramped) accelerations, cruise
segments with mild speed wander and idle periods. Sampled at 1 s, speeds in
m/s. Deterministic for a given seed.
"""

import argparse
import math
import random


def ramp(v0, v1, accel, t, out):
    """Cosine speed ramp from v0 to v1 with peak |accel| as given."""
    if v1 == v0:
        return t
    dur = max(1.0, math.pi * abs(v1 - v0) / (2.0 * accel))
    n = int(math.ceil(dur))
    for i in range(1, n + 1):
        s = 0.5 - 0.5 * math.cos(math.pi * i / n)
        out.append((t + i, v0 + (v1 - v0) * s))
    return t + n


def generate(seed, duration):
    rng = random.Random(seed)
    out = [(0.0, 0.0)]
    t, v = 0.0, 0.0
    t = idle(t, 8, out)
    while t < duration - 60:
        peak = rng.choice([8.0, 11.0, 13.5, 15.0, 17.0, 22.0, 25.0])
        t = ramp(v, peak, rng.uniform(0.9, 1.5), t, out)
        v = peak
        for _ in range(rng.randint(1, 3)):
            t = cruise(v, rng.uniform(10, 35), t, out, rng)
            if rng.random() < 0.5:
                nv = max(5.0, min(26.0, v + rng.uniform(-5, 5)))
                t = ramp(v, nv, rng.uniform(0.6, 1.0), t, out)
                v = nv
        t = ramp(v, 0.0, rng.uniform(1.0, 1.6), t, out)
        v = 0.0
        t = idle(t, rng.randint(8, 20), out)
    t = idle(t, int(duration - t), out)
    return [(tt, vv) for tt, vv in out if tt <= duration]


def idle(t, n, out):
    for i in range(1, n + 1):
        out.append((t + i, 0.0))
    return t + n


def cruise(v, dur, t, out, rng):
    n = int(dur)
    phase = rng.uniform(0, 2 * math.pi)
    for i in range(1, n + 1):
        out.append((t + i, max(0.0, v + 0.4 * math.sin(phase + 2 * math.pi * i / 15.0) - 0.4 * math.sin(phase))))
    return t + n


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--duration", type=float, default=600.0)
    ap.add_argument("--out", default="data/urban_cycle.csv")
    args = ap.parse_args()
    rows = generate(args.seed, args.duration)
    with open(args.out, "w") as f:
        f.write("# Synthetic urban cycle, 1 s samples (tools/gen_urban_cycle.py --seed %d)\n" % args.seed)
        f.write("t_s,v_mps\n")
        for t, v in rows:
            f.write("%g,%.3f\n" % (t, v))
    speeds = [v for _, v in rows]
    dist = sum(0.5 * (rows[i][1] + rows[i + 1][1]) for i in range(len(rows) - 1))
    print("rows %d, duration %g s, mean %.2f m/s, max %.2f m/s, distance %.0f m"
          % (len(rows), rows[-1][0], sum(speeds) / len(speeds), max(speeds), dist))


if __name__ == "__main__":
    main()
