"""Average-secrecy design: rate against the number of users at M = 64."""
from _common import run

if __name__ == "__main__":
    run("passive_K.toml", ("avg_secrecy_rate", "feasible", "iterations"), __doc__)
