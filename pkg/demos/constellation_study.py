"""
Which network structure helps player 1?
=======================================

Four players each pick a planar point.  For every acyclic, non-redundant
arrangement of who-follows-whom we compare player 1's cost with the
edgeless (Nash) arrangement over random instances.
"""
import logging
import sys

from qpnet.experiments import enumerate_configs, run_constellation_study

logging.basicConfig(level=logging.INFO, format="%(message)s")

configs, raw = enumerate_configs(return_raw_count=True)
print(f"{len(configs)} distinct configurations out of {raw} edge subsets")

# a few hundred samples already separate the leading structures
samples = int(sys.argv[1]) if len(sys.argv) > 1 else 200
res = run_constellation_study(samples, seed=0, jobs=None, progress=True)
print(f"{res.stats[0].samples} instances kept, {res.dropped} dropped")

ranked = sorted(res.stats, key=lambda s: s.mean)
print(f"{'configuration':<34} {'change':>8}  95% half-width")
for s in ranked[:10] + ranked[-3:]:
    print(f"{s.label:<34} {100 * s.mean:7.2f}%  {100 * s.ci95:.2f}%")
