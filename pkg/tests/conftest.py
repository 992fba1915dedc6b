from hypothesis import settings

# property tests run numeric workloads; wall-clock deadlines only add flak
settings.register_profile("taaclab", deadline=None)
settings.load_profile("taaclab")
