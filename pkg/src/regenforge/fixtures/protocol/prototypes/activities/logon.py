"""Activity: logon."""

from msgs.Logon import Logon

STEPS = [
    ("send", Logon),
]


def run(session) -> None:
    for direction, message in STEPS:
        session.handle(direction, message)
