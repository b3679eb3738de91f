"""Entropy and KL-divergence on hand-made blank distributions.

Run with ``python3 demos/01_entropy_and_kl.py``.
"""

import numpy as np

from knowprobe import TopKPrediction, approximate_pair, entropy, kl_divergence, knowledge_scores

# A model that already knows "France's capital is ___" puts most mass on Paris.
# Telling it the fact again barely moves anything.
known_before = TopKPrediction.from_pairs({"Paris": 0.86, "Lyon": 0.06, "Nice": 0.03})
known_after = TopKPrediction.from_pairs({"Paris": 0.90, "Lyon": 0.04, "Nice": 0.02})

# An unknown fact starts spread out and collapses once the answer is supplied.
unknown_before = TopKPrediction.from_pairs({"Tbilisi": 0.12, "Baku": 0.11, "Yerevan": 0.10, "Kyiv": 0.08})
unknown_after = TopKPrediction.from_pairs({"Tbilisi": 0.93, "Baku": 0.02})

for name, before, after in [("known", known_before, known_after), ("unknown", unknown_before, unknown_after)]:
    s = knowledge_scores(before, after, gold=before.tokens[0], fact_id=name)
    print(f"{name:8s} H_before={s.entropy_before:.3f} H_after={s.entropy_after:.3f} "
          f"delta={s.entropy_delta:+.3f} KL={s.kl_score:.3f}")

# Both predictions list only a few tokens. The approximation builds one shared
# support (union of the lists plus an out-of-vocabulary slot) and spreads each
# side's leftover mass over the slots that side did not list.
p, q = approximate_pair(unknown_before, unknown_after)
print("\nshared support:", p.support)
print("before:", np.round(p.as_array(), 3))
print("after: ", np.round(q.as_array(), 3))

# Entropy ignores which token holds which mass, so shuffling a distribution
# leaves it unchanged. KL notices the shuffle.
shuffled = type(p)(p.support, tuple(np.roll(p.as_array(), 1)))
print(f"\nentropy original={entropy(p):.6f} shuffled={entropy(shuffled):.6f}")
print(f"KL(original || shuffled) = {kl_divergence(p, shuffled):.3f}")
