"""Synchronization for Order: runs activities when model attributes change."""

from activities import order_entry
from models.order import Order

TRIGGERS = {
    "status": order_entry,
}


def on_change(before: Order, after: Order, session) -> None:
    for attribute in after.changed(before):
        activity = TRIGGERS.get(attribute)
        if activity is not None:
            activity.run(session)
