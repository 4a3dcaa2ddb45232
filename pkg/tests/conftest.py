import livesight.tensor

# Every forward op asserts finiteness while the suite runs.
livesight.tensor.CHECK_FINITE = True
