"""Independent derivations of the constants frozen into the C++ tests.

Run with python3; prints each value. Nothing here imports project code.
"""
import math

import numpy as np
from scipy.integrate import solve_ivp


def heater_step(t, t0=15.0, t_amb=15.0, k_loss=5e-4, p_heat=5e-3):
    t_inf = t_amb + p_heat / k_loss
    return t_inf + (t0 - t_inf) * math.exp(-k_loss * t)


def heater_step_numeric(t_end=3600.0):
    sol = solve_ivp(lambda t, y: [-5e-4 * (y[0] - 15.0) + 5e-3], (0, t_end), [15.0], rtol=1e-12, atol=1e-12)
    return sol.y[0, -1]


def ph_raw(t_amb, truth=6.5, slope=0.008):
    return truth * (1 + slope * (t_amb - 25.0))


def pollination_starts(on=6, off=22, n=3):
    return [3600.0 * (on + k * (off - on) / n) for k in range(n)]


def soil_step(t_air=20.0, t_soil=20.0, duty=1.0, hours=2.0):
    # air held constant at t_air, soil heater at duty: linear ODE closed form
    k_cond, p_soil = 2e-4, 2e-3
    t_inf = t_air + p_soil * duty / k_cond
    return t_inf + (t_soil - t_inf) * math.exp(-k_cond * hours * 3600)


def downsample_count(span, bucket):
    return math.ceil(span / bucket)


if __name__ == "__main__":
    print("heater_step(3600)        =", repr(heater_step(3600.0)))
    print("heater_step numeric      =", repr(heater_step_numeric()))
    print("ph raw at 10/25/40       =", [round(ph_raw(t), 12) for t in (10, 25, 40)])
    print("ph relative bias at 40   =", ph_raw(40) / 6.5 - 1)
    print("pollination starts (s)   =", pollination_starts())
    print("led duty 3500/20000      =", 3500 / 20000)
    print("pump pulse 50 + 10*0.2   =", 50 + 10 * 0.2)
    print("corrected 7.28/1.12      =", 7.28 / 1.12)
    print("soil step 2 h            =", repr(soil_step()))
    print("buckets 86400/144        =", downsample_count(86400, 144))
    print("buckets 1000/60          =", downsample_count(1000, 60))
    # stress 0.5 on every channel of germination only
    print("yield at stress 0.5      =", 1 - 0.5)
    print("days to harvest, fresh   =", 14 + 30 + 20 + 30)
    print("days, germ stress .5 d0  =", (14 + 30 + 20 + 30) * 1.5)
    # photoperiod fraction 6-22
    print("photoperiod fraction     =", 16 / 24)
    print("closed-loop air heater equilibrium at 15 C, full duty =", 15 + 5e-3 / 5e-4)
