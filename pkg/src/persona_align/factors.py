"""The six persona factors, in their fixed rendering order."""

FACTORS = ("travel_time", "travel_cost", "flexibility", "travel_habit", "comfort", "trip_purpose")
FACTOR_LABELS = {f: f.replace("_", " ") for f in FACTORS}
