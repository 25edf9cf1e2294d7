import math

import pytest
from hypothesis import HealthCheck, settings

from rounddz.geometry import AgentState, ApproachLeg, RoundaboutMap, Vec2, build_roundabout

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def rmap():
    return build_roundabout()


def straight_map(yield_x=50.0):
    """One straight leg along +x ending in a roundabout centered far ahead."""
    center = Vec2(yield_x + 12.5, 0.0)
    leg = ApproachLeg(0, (Vec2(0.0, 0.0), Vec2(yield_x, 0.0), Vec2(yield_x + 20.0, 0.0)), Vec2(yield_x, 0.0),
                      Vec2(yield_x + 2.5, 0.0))
    return RoundaboutMap(center, 8.0, 12.0, 4.0, (leg,))


def moving(x, y, speed, heading, length=4.5):
    return AgentState(Vec2(x, y), Vec2(speed * math.cos(heading), speed * math.sin(heading)), heading=heading,
                      length=length)
