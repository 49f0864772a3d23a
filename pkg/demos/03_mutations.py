"""Label-preserving mutations and the metamorphic validity constraint.

Each accepted mutant descends from a seed through a lineage: at most one
affine transform (crop, flip, rotation, perspective), any number of
pixel-level ones (contrast, jitter, blur). Pixel-level changes must stay
close to the lineage's reference image: either few components changed
(the alpha bound) or no component changed much (the beta bound).
"""

import numpy as np

from codofuzz import (
    LineageState,
    TransformKind,
    apply_transform,
    is_valid,
    load_dataset,
    mutate,
    quantize,
    replay_lineage,
)
from codofuzz.desk import make_blobs_source

(image, label), *_ = load_dataset(make_blobs_source(count=3))
print("seed image of class", label)

# Single transforms with explicit parameters.
rotated = apply_transform(image, TransformKind.ROTATION, {"degrees": 10.0})
blurred = apply_transform(image, TransformKind.GAUSSIAN_BLUR, {"sigma": 1.0})
jittered = apply_transform(image, TransformKind.COLOR_JITTER, {"brightness": 0.85, "contrast": 1.1})
print("max |change| after rotation:", float(np.abs(rotated - image).max()))
print("max |change| after blur:    ", float(np.abs(blurred - image).max()))
print("max |change| after jitter:  ", float(np.abs(jittered - image).max()))

# The DeepHunter-style validity disjunction with alpha=0.2, beta=0.5:
print("blur valid?   ", is_valid(image, quantize(blurred)))
print("jitter valid? ", is_valid(image, quantize(jittered)))

# Shifting every pixel by 0.6 changes everything by a lot: invalid.
hopeless = quantize(np.clip(image + 0.6, 0.0, 1.0))
print("global 0.6 shift valid?", is_valid(image, hopeless))

# Random lineages: sample transforms, respecting the one-affine rule.
rng = np.random.default_rng(42)
state = LineageState(reference_image=image)
current = image
records = []
for step in range(5):
    raw, record = mutate(current, state, rng)
    current = quantize(raw)
    state = state.child(current, record)
    records.append(record)
    print(f"step {step}: {record.kind.value:>18} affine={record.is_affine} "
          f"(affine_used={state.affine_used})")

# The lineage replays bit for bit from the seed plus its records.
replayed = replay_lineage(image, records)
print("replay identical:", bool(np.array_equal(replayed, current)))
