from . import ops, schemas

__all__ = ["ops", "schemas"]
