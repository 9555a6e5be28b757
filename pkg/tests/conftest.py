import pytest

from iqa_rl.response import render_think

STAGE1_THINK = render_think(
    "The image suffers from noise and harsh flash lighting.",
    "Sharper rendering of the frame lettering and cleaner textures.",
    "Digital noise across the frame and blown-out specular highlights.",
    "The flaws are global, so no crop is needed; rating in the Poor band.",
)


def make_text(think=STAGE1_THINK, answer='{"bbox_2d":[0,0,0,0],"rating":2.25,"tool":"final"}'):
    return f"<think>\n{think}\n</think>\n<answer>{answer}</answer>"


@pytest.fixture
def valid_text():
    return make_text()


@pytest.fixture
def crop_text():
    return make_text(answer='{"bbox_2d":[10,10,200,200],"rating":3.5,"tool":"crop"}')


# criterion number -> (status, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
