"""
Learning from clicks when ratings are scarce
============================================

Only one interaction in ten carries a rating; the rest are clicks. Training on
ratings alone ignores most of the preference signal. Mixed feedback keeps the
ratings (rescaled to [0, 1]), labels every click positive and samples unclicked
items from the same session as negatives.
"""

from newsrec import harness
from newsrec.corpus import Dataset
from newsrec.synth import SynthSpec, generate

spec = SynthSpec(n_users=300, n_items=1000, n_interactions=30000, explicit_fraction=0.1,
                 affinity_sd=1.0, choice_strength=2.0, popularity_exponent=1.2,
                 user_bias_sd=0.2, item_bias_sd=0.2)
data = generate(spec, seed=0)
dataset = Dataset(data.catalog, data.interactions)
rated = sum(x.rating is not None for x in data.interactions)
print(f"{rated} rated of {len(data.interactions)} interactions")

# %%
for feedback in ("explicit", "implicit", "mixed"):
    cfg = harness.ExperimentConfig()
    cfg.experiment.feedback = feedback
    cfg.evaluation.ks = (10,)
    report = harness.run_experiment(cfg, prep=harness.prepare(cfg, dataset)).report
    print(f"{feedback:<9} f1@10={report.f1[10]:.4f} precision@10={report.precision[10]:.4f}")

# %%
# The decay-weighted popularity baseline needs no training targets at all.
cfg = harness.ExperimentConfig()
cfg.experiment.model = "decay-baseline"
cfg.evaluation.ks = (10,)
report = harness.run_experiment(cfg, prep=harness.prepare(cfg, dataset)).report
print(f"decay     f1@10={report.f1[10]:.4f}")
