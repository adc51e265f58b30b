"""Small end-to-end tour: render a world, look at an interaction stream,
train a tiny SimCLR-TT model for a few hundred steps and probe it.

Run with ``python demos/walkthrough.py``; takes about a minute on one core.
"""

import numpy as np

from timeaug.augment import AugConfig
from timeaug.config import EvalConfig
from timeaug.experiments import evaluate_synth, synth_eval_images
from timeaug.losses import LossConfig
from timeaug.nn import EncoderConfig
from timeaug.synthworld import InteractionConfig, InteractionStream, WorldConfig, generate_episode, make_world
from timeaug.train import StreamSource, TrainConfig, build_learner, train

world = make_world(WorldConfig(n_categories=3, objects_per_category=6, blank_background=True), seed=0)
print(f"world: {len(world.objects)} objects, train {len(world.train_object_ids)}, test {len(world.test_object_ids)}")

inter = InteractionConfig(rot=120.0, d_max=0.0, N_s=1)
frames = generate_episode(world, inter, seed=0, length=12)
for f in frames:
    print(f"t={f.timestep:2d} object={f.object_id:2d} category={f.category_id} "
          f"orientation={f.orientation_deg:6.1f} distance={f.distance_m:.3f}")

enc = EncoderConfig(conv_stack=((16, 8, 4, 2), (32, 4, 2, 1), (64, 4, 2, 1)), embed_dim=32, dropout_p=0.0)
source = StreamSource(InteractionStream(world, inter, seed=0), AugConfig.identity(), "tt", seed=0,
                      pushes_per_step=8, prefill=500)
learner = build_learner(enc, "simclr", seed=0)
result = train(learner, source, LossConfig(), TrainConfig(batch_size=64, steps=200, pair_mode="tt", lr=1e-3))
losses = [r["loss"] for r in result.trace]
print(f"loss: first 10 steps {np.mean(losses[:10]):.3f}, last 10 steps {np.mean(losses[-10:]):.3f}")

eval_cfg = EvalConfig(targets=("category", "object"), distance="nominal", views_per_object=10)
report = evaluate_synth(learner.encoder, synth_eval_images(world, eval_cfg), eval_cfg, seed=0)
for row in report.rows:
    print(f"{row['target']:>8} probe on {row['split']}: {row['accuracy']:.3f}")
