# Hand-written parts of the generated NewOrderSingle message.

    # <~region:validate~>
    def validate(self) -> bool:
        return self.order_qty > 0 and self.side in ("1", "2")
    # <~/region:validate~>
