"""Order entity."""

from dataclasses import dataclass


@dataclass
class Order:
    status: str

    FIELDS = (
        "status",
    )

    def changed(self, other: "Order") -> list:
        return [f for f in self.FIELDS if getattr(self, f) != getattr(other, f)]
