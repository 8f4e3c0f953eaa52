"""Entity registry."""

from .order import Order

ENTITIES = [
    Order,
]
