import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
FIXTURES = TESTS_DIR / "fixtures"
FAKE_KERNELS = TESTS_DIR / "fake_kernels"

sys.path.insert(0, str(TESTS_DIR))

# Question texts used by the checked-in prompt fixtures.
HIKING_QUESTION = (
    "Marissa is hiking a 12-mile trail. She took 1 hour to walk the first 4 "
    "miles, then another hour to walk the next two miles. If she wants her "
    "average speed to be 4 miles per hour, what speed (in miles per hour) "
    "does she need to walk the remaining distance?"
)
QUADRATIC_QUESTION = (
    "The two solutions of equation $x^2+bx+48=0$ are in the ratio of 3 to 1 "
    "for some values of $b$. What is the largest possible value of $b$?"
)
BUS_QUESTION = (
    "A bus comes by Jerry's bus stop every 20 minutes starting at exactly "
    "5:13 a.m. If Jerry shows up at exactly 8:35 a.m., how many minutes will "
    "he have to wait for the next bus?"
)
RAMP_QUESTION = (
    "Bella's grandfather is confined to a wheelchair. He is coming to visit "
    "her. Bella wants to build a wheelchair ramp. Her research shows that "
    "there must be 3.5 meters of ramp for every 30 centimeters of elevation. "
    "The distance from the ground to the front doorstep of Bella's house is "
    "9 cm. What must the length of the ramp be?"
)
COINS_QUESTION = (
    "Zain has 10 more of each coin than Emerie. If Emerie has six quarters, "
    "seven dimes, and five nickels, how many coins does Zain have?"
)
MARATHON_QUESTION = (
    "In a marathon, every runner must run through several checkpoints. In "
    "the first segment, Angela runs 15 meters more than Miguel. For each "
    "subsequent segment, Angela runs 5 meters less than she did in the "
    "previous segment, while Miguel runs consistently. If Miguel runs 50 "
    "meters in the first segment, how many meters does Angela run in total "
    "when she completes 5 segments?"
)
STEPS_QUESTION = (
    "When Jeffrey walks, for every three steps forward, he takes two steps "
    "backwards.  Therefore, if the distance between the house and the "
    "mailbox is 66 steps, what is the total number of steps Jeffrey takes "
    "when he goes from the house to the mailbox?"
)
APPLES_QUESTION = (
    "For every four apples Jake eats, he plants three apple seeds. If at "
    "the end of the month he has consumed 24 apples, how many seeds has he "
    "planted?"
)

ROAD_TRIP_QUESTION = (
    "A group of friends went on a road trip across two cities. In the first "
    "city, they spent half of the money they had plus an additional $50. In "
    "the second city, they spent half of what was left plus an additional "
    "$20, leaving them with $40. How much money did they start with before "
    "the road trip?"
)


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture
def road_trip_fixture() -> str:
    return fixture_text("road_trip_conversation.txt")


@pytest.fixture
def six_block_fixtures() -> list[str]:
    return [
        fixture_text("six_block_arithmetic.txt"),
        fixture_text("six_block_unicode.txt"),
    ]
