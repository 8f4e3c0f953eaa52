"""Synchronization registry: entity name to change handler."""

from .order_sync import on_change as order_on_change

HANDLERS = {
    "Order": order_on_change,
}
