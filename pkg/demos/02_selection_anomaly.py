"""How rule selection works: similarity scores, Gaussian fit, anomaly test.

A note is compared against every rule description (plus random truncations of
the note); all scores are pooled to fit a Gaussian, and rules whose mean score
is an upper-tail outlier at significance 0.05 are selected. The demo prints
the whole profile and the normal Q-Q pairs used to sanity-check the fit.
"""

from scipy import stats

from cdr_agent import load_registry, qq_points, select_cdrs
from cdr_agent.providers import MockEmbeddingProvider
from cdr_agent.selection import SelectionConfig

from _util import demo_registry_dir

registry = load_registry(demo_registry_dir())
note = (
    "A 7-year-old male presents after blunt torso trauma from a bicycle handlebar "
    "striking the abdomen. Examination shows abdominal wall trauma with ecchymosis "
    "and a seat belt sign. The child complains of abdominal pain around the umbilicus. "
    "Breath sounds are clear and equal bilaterally. The child denies vomiting."
)

config = SelectionConfig(alpha=0.05, num_truncations=10, retention_ratio=0.7, rng_seed=0)
profile = select_cdrs(note, registry, config, MockEmbeddingProvider())

threshold = stats.norm.isf(config.alpha)
print(f"pooled fit: mu={profile.mu_hat:.4f} sigma={profile.sigma_hat:.4f}  z-threshold={threshold:.3f}\n")
for cdr_id, sim in sorted(profile.per_cdr.items(), key=lambda kv: -kv[1].statistic):
    marker = "*" if cdr_id in profile.selected else " "
    bar = "#" * max(0, int(10 * (sim.zscore + 2)))
    print(f" {marker} {cdr_id:20s} mean={sim.statistic:.4f} z={sim.zscore:+.2f} {bar}")
print(f"\nselected: {list(profile.selected) or 'no applicable rule'}")

pooled = [s for sim in profile.per_cdr.values() for s in sim.scores]
print("\nnormal Q-Q pairs of the pooled scores (theoretical, standardized sample):")
points = qq_points(pooled, profile.mu_hat, profile.sigma_hat)
for theo, sample in points[:: max(1, len(points) // 10)]:
    print(f"  {theo:+.3f}  {sample:+.3f}")
print("(approximately equal columns mean the Gaussian fit is reasonable)")

print("\nensemble collapse check: retention 1.0 is independent of the seed")
for seed in (0, 99):
    collapsed = select_cdrs(
        note, registry, SelectionConfig(retention_ratio=1.0, rng_seed=seed), MockEmbeddingProvider()
    )
    print(f"  seed={seed}: selected={list(collapsed.selected)}")
