"""Heartbeat message."""

from dataclasses import dataclass

MSG_TYPE = "0"


@dataclass
class Heartbeat:
    test_req_id: str

    def encode(self) -> dict:
        return {
            "35": MSG_TYPE,
            "112": self.test_req_id,
        }

    # <~region:validate~>
    def validate(self) -> bool:
        return True
    # <~/region:validate~>
