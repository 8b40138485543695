"""Robust active design: secrecy rate and feasibility as the ED approaches user K."""
from _common import run

if __name__ == "__main__":
    run("de_ratio.toml", ("secrecy_rate", "feasible", "iterations"), __doc__)
