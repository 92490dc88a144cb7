"""Session fixtures: trained models for the desk-scale synthetic benchmark.

Training a model takes minutes, so fixtures cache checkpoints under
tests/.cache keyed by the full recipe; delete the directory to force
retraining.
"""

import hashlib
import json
from pathlib import Path

import pytest

from clustertrack.autoenc import (
    AutoencoderConfig,
    build_training_set,
    calibrate_embed_threshold,
    train,
)
from clustertrack.autoenc.checkpoint import load_checkpoint, save_checkpoint
from clustertrack.synthgen import SynthConfig, generate_sequence

CACHE_DIR = Path(__file__).parent / ".cache"
CACHE_VERSION = 1

# desk-scale benchmark recipe: training data disjoint from evaluation seeds
DESK_TRAIN_SEEDS = tuple(range(100, 106))
DESK_TRAIN_FRAMES = 120
DESK_EPOCHS = 60
DESK_BATCH = 64

TINY_SYNTH = dict(frame_w=64, frame_h=64, object_size=14, num_frames=80, mean_speed=3.0)
TINY_AE = dict(mask_size=16, latent=16, conv_channels=(8, 8, 16, 16))


def desk_train_sequences():
    return [
        generate_sequence(SynthConfig(num_frames=DESK_TRAIN_FRAMES, seed=s))
        for s in DESK_TRAIN_SEEDS
    ]


def _cached_model(tag: str, recipe: dict, builder):
    key = json.dumps([CACHE_VERSION, tag, recipe], sort_keys=True, default=str)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    path = CACHE_DIR / f"{tag}_{digest}.ckpt"
    if path.exists():
        return load_checkpoint(path)
    params, meta = builder()
    CACHE_DIR.mkdir(exist_ok=True)
    save_checkpoint(path, params, meta)
    return load_checkpoint(path)


def train_desk_model(branch: str, mtl: bool = True):
    recipe = dict(
        branch=branch,
        mtl=mtl,
        seeds=DESK_TRAIN_SEEDS,
        frames=DESK_TRAIN_FRAMES,
        epochs=DESK_EPOCHS,
        batch=DESK_BATCH,
    )

    def build():
        seqs = desk_train_sequences()
        cfg = AutoencoderConfig(branches=branch)
        x_m, x_b = build_training_set(seqs, cfg)
        params, _ = train(
            x_m, x_b, cfg, epochs=DESK_EPOCHS, batch_size=DESK_BATCH, seed=0, mtl=mtl
        )
        thr = calibrate_embed_threshold(params, seqs)
        return params, {"embed_dist_max": thr, "mtl": mtl}

    tag = f"desk_{branch}" + ("" if mtl else "_eqw")
    return _cached_model(tag, recipe, build)


def train_tiny_model(branch: str = "both"):
    recipe = dict(branch=branch, synth=TINY_SYNTH, autoenc=TINY_AE, epochs=25)

    def build():
        seqs = [generate_sequence(SynthConfig(seed=200 + i, **TINY_SYNTH)) for i in range(3)]
        cfg = AutoencoderConfig(branches=branch, **TINY_AE)
        x_m, x_b = build_training_set(seqs, cfg)
        params, _ = train(x_m, x_b, cfg, epochs=25, batch_size=64, seed=0)
        thr = calibrate_embed_threshold(params, seqs)
        return params, {"embed_dist_max": thr, "mtl": True}

    return _cached_model(f"tiny_{branch}", recipe, build)


@pytest.fixture(scope="session")
def desk_models():
    """Branch -> (params, meta) for the desk-scale benchmark models."""
    return {b: train_desk_model(b) for b in ("both", "loc", "shape")}


@pytest.fixture(scope="session")
def desk_model_equal_weights():
    return train_desk_model("both", mtl=False)


@pytest.fixture(scope="session")
def tiny_models():
    """Branch -> (params, meta), small fast models over 64x64 frames."""
    return {b: train_tiny_model(b) for b in ("both", "loc", "shape")}


@pytest.fixture(scope="session")
def tiny_model(tiny_models):
    """Small fast model over 64x64 frames for tracker and CLI tests."""
    return tiny_models["both"]


@pytest.fixture(scope="session")
def tiny_synth_kwargs():
    return dict(TINY_SYNTH)
