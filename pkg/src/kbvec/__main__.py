from kbvec.cli import main

main()
