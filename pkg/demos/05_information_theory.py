"""
Why the policy should see the age of its data
=============================================

On a three-state Markov chain observed with a random delay, the spread of
returns given the (stale) observation splits into the spread that remains
once the delay is known, plus the spread of the delay-conditioned means.
That second part is what an age-aware policy can remove.
"""
from asyncnav.infotheory import delay_free, entropy_inequality_check, three_state_chain, variance_decomposition_check

for name, mdp in [("delay 0 or 1 step", three_state_chain((0.5, 0.5, 0.0))),
                  ("delay 0, 1 or 2 steps", three_state_chain((0.2, 0.3, 0.5))),
                  ("no delay", delay_free(three_state_chain()))]:
    rep = variance_decomposition_check(mdp, n_samples=200_000, seed=0)
    print(f"-- {name}")
    for line in rep.lines():
        print("   " + line)

ok, margins = entropy_inequality_check(100, seed=0)
print(f"H(S|X,Y) <= H(S|X) on 100 random tables: {ok}; smallest margin {min(margins):.2e} nats")
