import os
import sys

import hypothesis
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hbvote.chain import Chain, Difficulty, VoteBlock, append, mined  # noqa: E402
from hbvote.config import ElectionConfig  # noqa: E402

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DESK = ElectionConfig(
    election_id="TR2018", levels=2, clusters=2, centers_per_cluster=10, voters=10_000,
    sync_interval_s=300, pause_s=60, latency_ms=100, zero_bits=(8,), seed=42,
)

SMALL = ElectionConfig(
    election_id="E1", levels=2, clusters=2, centers_per_cluster=3, voters=300,
    zero_bits=(4,), election_duration_s=3600, seed=7,
)


def vote_chain(n, election_id="E1", box="box-a", bits=8, candidates=("A", "B", "BLANK")):
    """A level-0 chain of ``n`` correctly mined votes."""
    difficulty = Difficulty((bits,))
    chain = Chain.new(election_id, 0)
    for i in range(n):
        draft = VoteBlock(election_id, box, candidates[i % len(candidates)], chain.tip_hash)
        chain = append(chain, mined(draft, difficulty.at(0)), difficulty)
    return chain


@pytest.fixture
def small_config():
    return SMALL

