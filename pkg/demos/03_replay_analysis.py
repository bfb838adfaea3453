# %% [markdown]
# Replaying the measurements on synthetic annotations
#
# The analysis helpers accept recorded traces with ground-truth labels.
# Here we fabricate a small dataset with known answers and check the
# tables against them.

# %%
import numpy as np

from tokenrepair import (
    AnnotatedTrace,
    GenerationTrace,
    ProbEntry,
    RepairPath,
    TokenStep,
    localization_accuracy_grid,
    uncertainty_tendency,
)


def trace_from_profile(profile, pid):
    steps = tuple(
        TokenStep(i, ProbEntry(f"t{i}", 1 - u / 2), (ProbEntry(f"t{i}", 1 - u / 2), ProbEntry("~", u / 2)))
        for i, u in enumerate(profile, start=1))
    return GenerationTrace(pid, steps)


# %%
rng = np.random.default_rng(0)
data = []
for i in range(200):
    prof = rng.uniform(0.05, 0.4, size=int(rng.integers(8, 30)))
    fault = int(rng.integers(2, len(prof) + 1))
    prof[fault - 1] += rng.uniform(0.1, 0.6)  # the faulty token tends to spike
    data.append(AnnotatedTrace(trace_from_profile(np.clip(prof, 0, 1), f"p{i}"), {fault}))

table = localization_accuracy_grid(data)
print(table.to_text())

# %% [markdown]
# Accuracy never drops as K grows, since the top-K list only gains entries.

# %%
for alpha in table.alphas:
    row = table.row(alpha)
    assert all(a <= b for a, b in zip(row, row[1:]))

# %%
paths = [RepairPath(tuple(np.sort(rng.uniform(size=4))[::-1]), "correct") for _ in range(30)]
paths += [RepairPath(tuple(rng.uniform(size=4)), "random") for _ in range(30)]
print(uncertainty_tendency(paths).to_text())
