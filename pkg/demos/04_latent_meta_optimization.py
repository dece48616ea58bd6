"""Gap-driven latent recovery and the finite-difference meta-gradient check."""
from __future__ import annotations

from mpssl.verify import check_gap_recovery, check_meta_gradient


def main() -> None:
    print(check_meta_gradient(instances=3).line())
    print(check_meta_gradient(instances=3, gap_kind="mmd").line())
    print(check_gap_recovery(steps=200).line())


if __name__ == "__main__":
    main()
