# Tests package for CVID
