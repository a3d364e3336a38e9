from unilearn.cli import main

main()
