# %% [markdown]
# Where does a generated patch go wrong?
#
# Every decoding step carries a next-token distribution. The gap between the
# two most likely tokens tells us how sure the model was; a sudden rise in
# that uncertainty flags a token worth revisiting.

# %%
import numpy as np

from tokenrepair import GenerationTrace, ProbEntry, TokenStep, select_top_k, uncertainty_profile

rng = np.random.default_rng(3)
tokens = ["    if", " (", "dataset", " !=", " null", ")", " {"]
steps = []
for pos, tok in enumerate(tokens, start=1):
    probs = np.sort(rng.dirichlet(np.full(4, 0.6)))[::-1]
    alts = (ProbEntry(tok, float(probs[0])),) + tuple(
        ProbEntry(f"<alt{pos}.{i}>", float(p)) for i, p in enumerate(probs[1:], start=1))
    steps.append(TokenStep(pos, alts[0], alts))
trace = GenerationTrace("demo", tuple(steps))

# %%
for tok, u in zip(trace.tokens, uncertainty_profile(trace)):
    print(f"{tok!r:>12}  U = {u:.3f}")

# %% [markdown]
# Only positions whose uncertainty climbs above the previous one are
# candidates. The decay factor trades rise size against position: a small
# alpha strongly favours early tokens.

# %%
for alpha in (0.2, 0.5, 0.8, 1.0):
    ranked = select_top_k(trace, alpha, k=3)
    print(f"alpha={alpha}:", [(s.position, s.token, round(s.global_score, 5)) for s in ranked])
