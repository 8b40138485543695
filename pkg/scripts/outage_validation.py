"""Robust design audited by Monte Carlo: empirical outage per trial against the target."""
from _common import run

if __name__ == "__main__":
    run("outage.toml", ("secrecy_rate", "feasible", "empirical_outage"), __doc__)
