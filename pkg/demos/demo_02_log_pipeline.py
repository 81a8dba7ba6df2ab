"""
Log magnitudes plus a sign classifier
=====================================

Tendencies span many decades.  Regress ln|y| instead and let a classifier pick
the sign, then decode back to original units.
"""

import numpy as np

from aeroemu import TrainConfig, evaluate, generate_dataset, predict_tendencies, train_log_pipeline
from aeroemu.evaluation import log_scale_scores

train_set = generate_dataset(20_000, seed=1)
test_set = generate_dataset(5_000, seed=2)

bundle, reg_log, clf_log = train_log_pipeline(TrainConfig(epochs=8), train_set)
print("classifier accuracy by epoch:", [round(a, 3) for a in clf_log.column("accuracy")])

mse, r2 = log_scale_scores(bundle.regressor, test_set)
print(f"log-scale R2 {r2.mean():.4f}, worst variable {r2.min():.4f}")

# decoded predictions carry the classifier's sign
pred = predict_tendencies(bundle, test_set.x[:5], constraint="none")
print(np.sign(pred[:, :6]))

rep = evaluate(bundle, test_set, constraint="correct")
print("neg fraction after correction:", rep.neg_fraction)
