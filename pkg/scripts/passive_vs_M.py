"""Average-secrecy design: rate against the number of IRS elements."""
from _common import run

if __name__ == "__main__":
    run("passive_M.toml", ("avg_secrecy_rate", "feasible", "iterations"), __doc__)
