"""Automated online multi-loss weight adaptation with a REINFORCE-trained controller."""
