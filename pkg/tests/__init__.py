'''
This init is not used, and is not necessary
'''