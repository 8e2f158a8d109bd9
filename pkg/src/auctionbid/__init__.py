"""Online bidding in repeated adversarial first-price auctions."""

__version__ = "0.1.0"
