"""One structure-aware augmentation, step by step.

Resources are grouped by server IP, each group gets a deletion weight that
favours small groups, and deleted groups disappear from both the logic
profile and the traffic trace.
"""
from wfalign.augment import AugConfig, augment_pair, ip_groups, selection_weights
from wfalign.synth import GenConfig, gen_corpus

pair = gen_corpus(GenConfig(n_sites=1, visits_per_site=1, ips_per_site=(4, 4), rng_seed=5))[0]
groups = ip_groups(pair.logic)
weights = selection_weights(groups)

print(f"site {pair.site_id}: {len(pair.logic.resources)} resources, "
      f"{len(pair.traffic.packets)} packets")
for ip, idx in groups.items():
    print(f"  {ip:>16}  {len(idx):3d} resources  weight {weights[ip]:.3f}")

for seed in range(4):
    out = augment_pair(pair, AugConfig(), seed)
    gone = sorted(pair.logic.server_ips - out.logic.server_ips)
    print(f"seed {seed}: removed {gone or 'nothing'} -> {len(out.logic.resources)} resources, "
          f"{len(out.traffic.packets)} packets")
