"""Print a JSON bundle of small simulation results; run under both kernel paths."""
import json, math, sys
import numpy as np
from metabranch import *
from metabranch.verify import TestFunction, coupled_batch, markov_restart_test, DBBM
from metabranch._jit import USING_NUMBA
BM = MovementSpec.brownian(1, 1.0)
P = Params(mu_S=1.0, mu_B=1.0, nu={1: .5, 2: .5}, q={0: .3, 1: .4, 2: .3}, delta_M=.3, delta_S=.2, L=3, movement=BM)
x = SimplifiedState(1, 0, [[0.0]])
out = {"numba": USING_NUMBA}
out["batch"] = simulate_batch(x, P, 1.0, 200, StreamKey(1), fn=TestFunction({(1, 0): 1, (2, 1): .5}).pack()).tolist()
log, fin = simulate(FullConfiguration.from_particles([()], [[0.0]]), P, 2.0, StreamKey(2))
out["events"] = [e.to_json() for e in log.events]
out["coupled"] = coupled_batch(P, 1.0, 200, StreamKey(3)).tolist()
chain = Params(mu_S=.5, q={0: .5, 2: .5}, delta_M=.2, movement=MovementSpec.brownian_chain(1, .5, [[0, 1], [2, 0]]))
out["chain"] = simulate_batch(SimplifiedState(1, 0, [[0.0, 1]]), chain, 1.0, 100, StreamKey(4)).tolist()
killed = P.replace(movement=MovementSpec.killed_brownian([-1], [1], 1.0, .01))
out["killed"] = simulate_batch(x, killed, 1.0, 100, StreamKey(5)).tolist()
json.dump(out, sys.stdout)
