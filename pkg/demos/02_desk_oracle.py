"""Meet the shipped desk-scale assets: a synthetic blob dataset and the
linear-softmax template matcher that classifies it.

The dataset renders oriented bars whose position and orientation derive
from a 2-D coordinate drawn per class. The model's weight rows are the
class-mean renderings, so confidence reflects template overlap.
"""

from collections import Counter

import numpy as np

from codofuzz import bin_index, load_dataset
from codofuzz.desk import make_blobs_source, make_desk_model, write_desk_assets

model = make_desk_model()
print("model:", model.describe(), "classes:", model.n_classes, "input:", model.input_shape)

data = list(load_dataset(make_blobs_source()))
print("dataset size:", len(data))

# Accuracy and the confidence landscape on clean data.
correct = 0
confidences = []
for image, label in data:
    pred = model.predict(image)
    correct += pred.output.predicted_class == label
    confidences.append(pred.output.confidence)
print(f"clean accuracy: {correct / len(data):.4f}")
print(f"confidence range: [{min(confidences):.3f}, {max(confidences):.3f}]")

bins = Counter(bin_index(c, 10) for c in confidences)
print("confidence bins (M=10):", dict(sorted(bins.items())))

# A quick look at one image: the bar is a short diagonal streak.
image, label = data[0]
art = np.array([" ", ".", ":", "+", "#"])
levels = np.clip((image[:, :, 0] * 4.999).astype(int), 0, 4)
print(f"sample of class {label}:")
for row in levels:
    print("   ", "".join(art[row]))

# Write model.json and blobs.json for CLI runs.
paths = write_desk_assets("demos/out/assets")
print("assets written:", *paths)
