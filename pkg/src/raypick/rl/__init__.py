"""Learning algorithms: on-policy (clipped surrogate) for the tracking layer,
off-policy actor-critic for the task policies, and replay storage."""
