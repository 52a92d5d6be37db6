"""``python -m qms_deco`` entry point"""
from qms_deco.cli import main

if __name__ == "__main__":
    main()
