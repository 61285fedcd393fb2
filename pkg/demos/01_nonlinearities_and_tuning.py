"""Actuator nonlinearities and controller tuning rules.

Walks through the saturation/dead-zone pair on a two-agent box and evaluates
the tuning validators on gains that pass and gains that do not.
"""

import numpy as np

import capnet as cp

bounds = cp.SaturationBounds(lower=[-1.0, -1.0], upper=[1.0, 1.0])
u = np.array([3.5, -2.0])
print("input u           :", u)
print("saturate(u)       :", cp.saturate(u, bounds))
print("deadzone(u)       :", cp.deadzone(u, bounds))
print("sat + dz == u     :", np.allclose(cp.saturate(u, bounds) + cp.deadzone(u, bounds), u))

# the dead-zone vanishes exactly while the input is feasible
u_inside = np.array([0.3, -0.7])
print("deadzone(inside)  :", cp.deadzone(u_inside, bounds))

print("\n-- decentralized tuning: need kP*a > kI and kP*kA < 1 --")
agents = cp.AgentEnsemble(a=[1.0, 1.0], w=[-2.0, -1.0])
good = cp.ControllerGains(kP=2.0, kI=1.0, mode="decentralized", kA=0.4, n_agents=2)
print(cp.validate_decentralized_tuning(agents, good).summary())

slow_plant = cp.AgentEnsemble(a=[0.6, 0.6], w=[-2.0, -1.0])
print()
print(cp.validate_decentralized_tuning(slow_plant, good).summary())

print("\n-- coordinating tuning: a*kP = (1+alpha)*kI and (kC/2)*sum(kP) <= 1 --")
coord = cp.ControllerGains(kP=1.0, kI=0.5, mode="coordinating", kC=0.5, alpha=1.0,
                            n_agents=2)
print(cp.validate_coordinating_tuning(agents, coord).summary())
