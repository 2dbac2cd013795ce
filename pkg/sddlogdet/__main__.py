from sddlogdet.main import run

run()
